#pragma once

#include <string>
#include <vector>

namespace flatcheck {

// Shape of a triangular form: m+1 inputs, the distinguished chain shorter by
// s, lower chains of length k_zeta, contact block depth k_chi and upper chain
// lengths k_xi (one per input).
struct StructureIndices {
    int m = 0;
    int s = 0;
    int k_zeta = 0;
    int k_chi = 0;
    std::vector<int> k_xi;

    int state_count() const;
    // Throws BadIndices.
    void validate() const;
    std::string to_string() const;

    friend bool operator==(const StructureIndices &, const StructureIndices &) = default;
};

// Template coordinate names in canonical order: xi<level>_<chain>, chi0,
// chi<level>_<chain>, zeta<level>_<chain>.
std::vector<std::string> tf_state_names(const StructureIndices &idx);

} // namespace flatcheck
