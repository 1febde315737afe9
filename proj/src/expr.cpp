#include "shv/expr.hpp"

#include "shv/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace shv {

Expr Expr::constant(double v) {
  Expr e;
  e.kind_ = Kind::constant;
  e.value_ = v;
  return e;
}

Expr Expr::operand(Topic t) {
  Expr e;
  e.kind_ = Kind::operand;
  e.topic_ = std::move(t);
  return e;
}

Expr Expr::negate(Expr inner) {
  Expr e;
  e.kind_ = Kind::negate;
  e.lhs_ = std::make_shared<const Expr>(std::move(inner));
  return e;
}

Expr Expr::binary(Kind k, Expr lhs, Expr rhs) {
  Expr e;
  e.kind_ = k;
  e.lhs_ = std::make_shared<const Expr>(std::move(lhs));
  e.rhs_ = std::make_shared<const Expr>(std::move(rhs));
  return e;
}

void Expr::collect(std::vector<Topic>& out) const {
  switch (kind_) {
    case Kind::constant:
      return;
    case Kind::operand:
      if (std::find(out.begin(), out.end(), topic_) == out.end())
        out.push_back(topic_);
      return;
    case Kind::negate:
      lhs_->collect(out);
      return;
    default:
      lhs_->collect(out);
      rhs_->collect(out);
  }
}

std::vector<Topic> Expr::operands() const {
  std::vector<Topic> out;
  collect(out);
  return out;
}

std::string Expr::str() const {
  switch (kind_) {
    case Kind::constant: {
      char buf[64];
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, std::abs(value_));
      std::string digits(buf, ptr);
      // Negative constants print as a negated factor so they re-parse.
      return std::signbit(value_) ? "(-" + digits + ")" : digits;
    }
    case Kind::operand:
      return "<" + topic_.str() + ">";
    case Kind::negate:
      return "(-" + lhs_->str() + ")";
    case Kind::add:
      return "(" + lhs_->str() + " + " + rhs_->str() + ")";
    case Kind::sub:
      return "(" + lhs_->str() + " - " + rhs_->str() + ")";
    case Kind::mul:
      return "(" + lhs_->str() + " * " + rhs_->str() + ")";
    case Kind::div:
      return "(" + lhs_->str() + " / " + rhs_->str() + ")";
  }
  return {};
}

double Expr::evaluate(const std::function<double(const Topic&)>& operand_value) const {
  switch (kind_) {
    case Kind::constant:
      return value_;
    case Kind::operand:
      return operand_value(topic_);
    case Kind::negate:
      return -lhs_->evaluate(operand_value);
    case Kind::add:
      return lhs_->evaluate(operand_value) + rhs_->evaluate(operand_value);
    case Kind::sub:
      return lhs_->evaluate(operand_value) - rhs_->evaluate(operand_value);
    case Kind::mul:
      return lhs_->evaluate(operand_value) * rhs_->evaluate(operand_value);
    case Kind::div: {
      double num = lhs_->evaluate(operand_value);
      double den = rhs_->evaluate(operand_value);
      if (den == 0.0)
        throw Error(Errc::division_by_zero, "division by zero");
      return num / den;
    }
  }
  return 0.0;
}

Expr Expr::substitute(const std::function<const Expr*(const Topic&)>& lookup) const {
  switch (kind_) {
    case Kind::constant:
      return *this;
    case Kind::operand:
      if (const Expr* replacement = lookup(topic_))
        return *replacement;
      return *this;
    case Kind::negate:
      return negate(lhs_->substitute(lookup));
    default:
      return binary(kind_, lhs_->substitute(lookup), rhs_->substitute(lookup));
  }
}

bool Expr::operator==(const Expr& other) const {
  if (kind_ != other.kind_)
    return false;
  switch (kind_) {
    case Kind::constant:
      return value_ == other.value_;
    case Kind::operand:
      return topic_ == other.topic_;
    case Kind::negate:
      return *lhs_ == *other.lhs_;
    default:
      return *lhs_ == *other.lhs_ && *rhs_ == *other.rhs_;
  }
}

namespace {

class ExprParser {
public:
  explicit ExprParser(std::string_view text) : text_(text) {}

  Expr parse() {
    auto e = expr();
    skip_ws();
    if (pos_ != text_.size())
      fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

private:
  [[noreturn]] void fail(const std::string& why) const {
    throw Error(Errc::syntax_error, "syntax error at offset " + std::to_string(pos_) + ": " + why);
  }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t'))
      ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expr expr() {
    auto lhs = term();
    while (true) {
      if (accept('+'))
        lhs = Expr::binary(Expr::Kind::add, std::move(lhs), term());
      else if (accept('-'))
        lhs = Expr::binary(Expr::Kind::sub, std::move(lhs), term());
      else
        return lhs;
    }
  }

  Expr term() {
    auto lhs = factor();
    while (true) {
      if (accept('*'))
        lhs = Expr::binary(Expr::Kind::mul, std::move(lhs), factor());
      else if (accept('/'))
        lhs = Expr::binary(Expr::Kind::div, std::move(lhs), factor());
      else
        return lhs;
    }
  }

  Expr factor() {
    skip_ws();
    if (pos_ >= text_.size())
      fail("unexpected end of expression");
    char c = text_[pos_];
    if (c == '-') {
      ++pos_;
      return Expr::negate(factor());
    }
    if (c == '(') {
      ++pos_;
      auto inner = expr();
      if (!accept(')'))
        fail("expected ')'");
      return inner;
    }
    if (c == '<')
      return operand();
    if ((c >= '0' && c <= '9') || c == '.')
      return number();
    fail("unexpected '" + std::string(1, c) + "'");
  }

  Expr operand() {
    auto start = pos_;
    ++pos_;  // '<'
    std::string name;
    while (true) {
      if (pos_ >= text_.size())
        fail("unterminated operand");
      char c = text_[pos_++];
      if (c == '>')
        break;
      if (c == '\\') {
        if (pos_ >= text_.size())
          fail("dangling escape");
        c = text_[pos_++];
      }
      name += c;
    }
    try {
      return Expr::operand(Topic::parse(name));
    } catch (const Error& e) {
      pos_ = start;
      fail(e.what());
    }
  }

  Expr number() {
    double v = 0;
    auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
    if (ec != std::errc{})
      fail("bad number");
    pos_ = static_cast<std::size_t>(ptr - text_.data());
    return Expr::constant(v);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

} // namespace

Expr parse_expr(std::string_view text) {
  return ExprParser(text).parse();
}

} // namespace shv
