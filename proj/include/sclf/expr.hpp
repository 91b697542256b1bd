#pragma once

#include <sclf/types.hpp>

#include <cctype>
#include <cmath>
#include <memory>
#include <string>

namespace sclf {

// Tiny expression grammar for declaring systems in config files without
// recompiling: +, -, *, /, ^, sin, cos, exp, numeric constants, pi, and the
// state variables x1..xn.
class Expr {
 public:
  static Expr parse(const std::string& text, int n_vars) {
    Parser p{text, 0, n_vars};
    auto root = p.parse_expr();
    p.skip_ws();
    if (p.pos != text.size())
      throw ConfigError("Expr: trailing characters in '" + text + "'");
    Expr e;
    e.root_ = std::shared_ptr<const Node>(root.release());
    e.text_ = text;
    return e;
  }

  double eval(const Vec& x) const { return eval_node(*root_, x); }
  const std::string& text() const { return text_; }

 private:
  struct Node {
    enum class Op { Const, Var, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Exp };
    Op op = Op::Const;
    double value = 0.0;
    int var = 0;
    std::unique_ptr<Node> a, b;
  };

  static double eval_node(const Node& n, const Vec& x) {
    switch (n.op) {
      case Node::Op::Const: return n.value;
      case Node::Op::Var:
        if (n.var >= x.size()) throw DimensionMismatch("Expr: variable index out of range");
        return x[n.var];
      case Node::Op::Add: return eval_node(*n.a, x) + eval_node(*n.b, x);
      case Node::Op::Sub: return eval_node(*n.a, x) - eval_node(*n.b, x);
      case Node::Op::Mul: return eval_node(*n.a, x) * eval_node(*n.b, x);
      case Node::Op::Div: return eval_node(*n.a, x) / eval_node(*n.b, x);
      case Node::Op::Pow: return std::pow(eval_node(*n.a, x), eval_node(*n.b, x));
      case Node::Op::Neg: return -eval_node(*n.a, x);
      case Node::Op::Sin: return std::sin(eval_node(*n.a, x));
      case Node::Op::Cos: return std::cos(eval_node(*n.a, x));
      case Node::Op::Exp: return std::exp(eval_node(*n.a, x));
    }
    throw InternalError("Expr: bad node");
  }

  struct Parser {
    const std::string& s;
    std::size_t pos;
    int n_vars;

    void skip_ws() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool eat(char c) {
      skip_ws();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    std::unique_ptr<Node> parse_expr() {
      auto lhs = parse_term();
      for (;;) {
        if (eat('+')) {
          auto n = std::make_unique<Node>();
          n->op = Node::Op::Add;
          n->a = std::move(lhs);
          n->b = parse_term();
          lhs = std::move(n);
        } else if (eat('-')) {
          auto n = std::make_unique<Node>();
          n->op = Node::Op::Sub;
          n->a = std::move(lhs);
          n->b = parse_term();
          lhs = std::move(n);
        } else {
          return lhs;
        }
      }
    }

    std::unique_ptr<Node> parse_term() {
      auto lhs = parse_factor();
      for (;;) {
        if (eat('*')) {
          auto n = std::make_unique<Node>();
          n->op = Node::Op::Mul;
          n->a = std::move(lhs);
          n->b = parse_factor();
          lhs = std::move(n);
        } else if (eat('/')) {
          auto n = std::make_unique<Node>();
          n->op = Node::Op::Div;
          n->a = std::move(lhs);
          n->b = parse_factor();
          lhs = std::move(n);
        } else {
          return lhs;
        }
      }
    }

    std::unique_ptr<Node> parse_factor() {
      auto base = parse_unary();
      if (eat('^')) {
        auto n = std::make_unique<Node>();
        n->op = Node::Op::Pow;
        n->a = std::move(base);
        n->b = parse_factor();  // right-associative
        return n;
      }
      return base;
    }

    std::unique_ptr<Node> parse_unary() {
      if (eat('-')) {
        auto n = std::make_unique<Node>();
        n->op = Node::Op::Neg;
        n->a = parse_unary();
        return n;
      }
      return parse_primary();
    }

    std::unique_ptr<Node> parse_primary() {
      skip_ws();
      if (pos >= s.size()) throw ConfigError("Expr: unexpected end of input");
      const char c = s[pos];
      if (c == '(') {
        ++pos;
        auto e = parse_expr();
        if (!eat(')')) throw ConfigError("Expr: missing ')'");
        return e;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        const double v = std::stod(s.substr(pos), &used);
        pos += used;
        auto n = std::make_unique<Node>();
        n->op = Node::Op::Const;
        n->value = v;
        return n;
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        std::size_t end = pos;
        while (end < s.size() &&
               (std::isalnum(static_cast<unsigned char>(s[end])) || s[end] == '_'))
          ++end;
        const std::string word = s.substr(pos, end - pos);
        pos = end;
        if (word == "pi") {
          auto n = std::make_unique<Node>();
          n->op = Node::Op::Const;
          n->value = M_PI;
          return n;
        }
        if (word == "sin" || word == "cos" || word == "exp") {
          if (!eat('(')) throw ConfigError("Expr: expected '(' after " + word);
          auto arg = parse_expr();
          if (!eat(')')) throw ConfigError("Expr: missing ')'");
          auto n = std::make_unique<Node>();
          n->op = word == "sin"   ? Node::Op::Sin
                  : word == "cos" ? Node::Op::Cos
                                  : Node::Op::Exp;
          n->a = std::move(arg);
          return n;
        }
        if (word.size() >= 2 && word[0] == 'x') {
          const int idx = std::atoi(word.c_str() + 1);
          if (idx < 1 || idx > n_vars)
            throw ConfigError("Expr: variable " + word + " out of range");
          auto n = std::make_unique<Node>();
          n->op = Node::Op::Var;
          n->var = idx - 1;
          return n;
        }
        throw ConfigError("Expr: unknown identifier '" + word + "'");
      }
      throw ConfigError(std::string("Expr: unexpected character '") + c + "'");
    }
  };

  std::shared_ptr<const Node> root_;
  std::string text_;
};

}  // namespace sclf
