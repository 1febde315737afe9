#pragma once

// Arithmetic expressions over sensor operands, used to define virtual
// sensors:
//
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := number | '<' topic '>' | '(' expr ')' | '-' factor
//
// Inside `<...>` a backslash escapes the next character, so both
// `</a/b>` and `<\/a\/b>` name the topic /a/b.

#include "shv/model.hpp"

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace shv {

class Expr {
public:
  enum class Kind { constant, operand, negate, add, sub, mul, div };

  static Expr constant(double v);
  static Expr operand(Topic t);
  static Expr negate(Expr e);
  static Expr binary(Kind k, Expr lhs, Expr rhs);

  Kind kind() const { return kind_; }
  double value() const { return value_; }
  const Topic& topic() const { return topic_; }
  const Expr& lhs() const { return *lhs_; }
  const Expr& rhs() const { return *rhs_; }

  /// Distinct operand topics in order of first appearance.
  std::vector<Topic> operands() const;

  /// Fully parenthesized text that parse_expr() reads back to an equal tree.
  std::string str() const;

  /// Folds the tree; throws Error{division_by_zero} on a zero divisor.
  double evaluate(const std::function<double(const Topic&)>& operand_value) const;

  /// Replaces every operand for which `lookup` returns non-null.
  Expr substitute(const std::function<const Expr*(const Topic&)>& lookup) const;

  bool operator==(const Expr& other) const;

private:
  Expr() = default;
  void collect(std::vector<Topic>& out) const;

  Kind kind_ = Kind::constant;
  double value_ = 0.0;
  Topic topic_;
  std::shared_ptr<const Expr> lhs_;
  std::shared_ptr<const Expr> rhs_;
};

/// Throws Error{syntax_error}; the message carries the byte offset.
Expr parse_expr(std::string_view text);

} // namespace shv
