#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include <flatcheck/expr.hpp>

namespace flatcheck::expr {

// Names an expression may refer to: plain symbols, and named subexpressions
// (model-file definitions) that are spliced in by reference.
struct Scope {
    std::unordered_set<std::string> symbols;
    std::unordered_map<std::string, Expr> macros;

    bool knows(const std::string &name) const { return symbols.count(name) || macros.count(name); }
};

// Grammar (docs/dsl.md):
//   expr   := term (('+' | '-') term)*
//   term   := unary (('*' | '/') unary)*
//   unary  := ('-' | '+') unary | power
//   power  := atom ('^' exponent)?
//   atom   := number | name | func '(' expr ')' | '(' expr ')'
// Exponents must fold to an integer. Throws SyntaxError or Error(UnknownSymbol).
Expr parse_expr(ExprDag &dag, std::string_view text, const Scope &scope);

bool is_identifier(std::string_view name);

} // namespace flatcheck::expr
