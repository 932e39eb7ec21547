#include <flatcheck/error.hpp>
#include <flatcheck/indices.hpp>

#include <numeric>

namespace flatcheck {

int StructureIndices::state_count() const
{
    return (m + 1) * k_zeta - s + m * k_chi + 1 + std::accumulate(k_xi.begin(), k_xi.end(), 0);
}

void StructureIndices::validate() const
{
    if (m < 2) throw Error(ErrorKind::BadIndices, "m must be at least 2 (three or more inputs)");
    if (s != 0 && s != 1) throw Error(ErrorKind::BadIndices, "s must be 0 or 1");
    if (k_zeta < s) throw Error(ErrorKind::BadIndices, "k_zeta must be at least s");
    if (k_chi < 2) throw Error(ErrorKind::BadIndices, "k_chi must be at least 2");
    if (k_xi.size() != static_cast<std::size_t>(m + 1)) throw Error(ErrorKind::BadIndices, "k_xi needs m+1 entries");
    for (int k : k_xi)
        if (k < 0) throw Error(ErrorKind::BadIndices, "k_xi entries must be non-negative");
}

std::string StructureIndices::to_string() const
{
    std::string out = "m=" + std::to_string(m) + " s=" + std::to_string(s) + " k_zeta=" + std::to_string(k_zeta) +
                      " k_chi=" + std::to_string(k_chi) + " k_xi=(";
    for (std::size_t i = 0; i < k_xi.size(); ++i) out += (i ? "," : "") + std::to_string(k_xi[i]);
    return out + ")";
}

std::vector<std::string> tf_state_names(const StructureIndices &idx)
{
    std::vector<std::string> out;
    for (int j = 0; j <= idx.m; ++j)
        for (int l = 1; l <= idx.k_xi[static_cast<std::size_t>(j)]; ++l) out.push_back("xi" + std::to_string(l) + "_" + std::to_string(j));
    out.push_back("chi0");
    for (int i = 1; i <= idx.k_chi; ++i)
        for (int j = 1; j <= idx.m; ++j) out.push_back("chi" + std::to_string(i) + "_" + std::to_string(j));
    for (int j = 0; j <= idx.m; ++j) {
        int len = j == 0 ? idx.k_zeta - idx.s : idx.k_zeta;
        for (int l = 1; l <= len; ++l) out.push_back("zeta" + std::to_string(l) + "_" + std::to_string(j));
    }
    return out;
}

} // namespace flatcheck
