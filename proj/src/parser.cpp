#include <flatcheck/parser.hpp>

#include <cctype>

namespace flatcheck::expr {

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class Parser {
public:
    Parser(ExprDag &dag, std::string_view text, const Scope &scope) : dag_(dag), text_(text), scope_(scope) {}

    Expr run()
    {
        Expr e = expr();
        skip_ws();
        if (pos_ < text_.size()) fail("operator or end of expression");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string &expected) const { throw SyntaxError(pos_ + 1, expected); }

    void skip_ws()
    {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c)
    {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c)
    {
        if (!accept(c)) fail(std::string("'") + c + "'");
    }

    Expr expr()
    {
        Expr acc = term();
        for (;;) {
            if (accept('+'))
                acc = dag_.add(acc, term());
            else if (accept('-'))
                acc = dag_.sub(acc, term());
            else
                return acc;
        }
    }

    Expr term()
    {
        Expr acc = unary();
        for (;;) {
            if (accept('*'))
                acc = dag_.mul(acc, unary());
            else if (accept('/'))
                acc = dag_.div(acc, unary());
            else
                return acc;
        }
    }

    Expr unary()
    {
        if (accept('-')) return dag_.neg(unary());
        if (accept('+')) return unary();
        return power();
    }

    Expr power()
    {
        Expr base = atom();
        if (!accept('^')) return base;
        return dag_.pow(base, exponent());
    }

    int exponent()
    {
        skip_ws();
        const std::size_t start = pos_;
        Expr e;
        if (accept('(')) {
            e = expr();
            expect(')');
        } else {
            int sign = 1;
            if (accept('-'))
                sign = -1;
            else
                accept('+');
            skip_ws();
            if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_]))) fail("integer exponent");
            e = number();
            if (sign < 0) e = dag_.neg(e);
        }
        const Node &n = dag_.node(e.id());
        if (n.op == Op::Constant) {
            const ConstantValue &c = dag_.constant_of(e.id());
            if (c.exact && c.q.is_integer() && c.q.num >= -64 && c.q.num <= 64) return static_cast<int>(c.q.num);
        }
        pos_ = start;
        fail("integer exponent");
    }

    Expr number()
    {
        const std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) ++pos_;
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t p = pos_ + 1;
            if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
            if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
                pos_ = p;
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            }
        }
        std::string_view lit = text_.substr(start, pos_ - start);
        if (auto q = Rational::from_decimal(lit)) return dag_.constant(*q);
        // Too many digits for an exact rational: keep the nearest double.
        std::string s(lit);
        char *end = nullptr;
        double v = std::strtod(s.c_str(), &end);
        if (end != s.c_str() + s.size()) {
            pos_ = start;
            fail("number");
        }
        return dag_.constant(v);
    }

    Expr atom()
    {
        skip_ws();
        if (pos_ >= text_.size()) fail("operand");
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = expr();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (!ident_start(c)) fail("operand");
        const std::size_t start = pos_;
        while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
        std::string name(text_.substr(start, pos_ - start));
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == '(') {
            Expr (ExprDag::*fn)(Expr) = nullptr;
            if (name == "sin")
                fn = &ExprDag::sin;
            else if (name == "cos")
                fn = &ExprDag::cos;
            else if (name == "tan")
                fn = &ExprDag::tan;
            if (!fn) {
                pos_ = start;
                fail("function name (sin, cos, tan)");
            }
            ++pos_;
            Expr arg = expr();
            expect(')');
            return (dag_.*fn)(arg);
        }
        if (auto it = scope_.macros.find(name); it != scope_.macros.end()) return it->second;
        if (!scope_.symbols.count(name))
            throw Error(ErrorKind::UnknownSymbol, "unknown symbol '" + name + "' at position " + std::to_string(start + 1));
        return dag_.symbol(name);
    }

    ExprDag &dag_;
    std::string_view text_;
    const Scope &scope_;
    std::size_t pos_ = 0;
};

} // namespace

Expr parse_expr(ExprDag &dag, std::string_view text, const Scope &scope) { return Parser(dag, text, scope).run(); }

bool is_identifier(std::string_view name)
{
    if (name.empty() || !ident_start(name.front())) return false;
    for (char c : name)
        if (!ident_char(c)) return false;
    return name != "sin" && name != "cos" && name != "tan";
}

} // namespace flatcheck::expr
