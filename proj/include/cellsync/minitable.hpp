#pragma once

// MiniTable: the built-in code dialect. One statement per line:
//
//   stmt    := IDENT '=' expr | expr
//   expr    := primary postfix*
//   primary := NUMBER | STRING | true | false | IDENT | IDENT '(' args ')' | '[' literals ']'
//   postfix := '[' IDENT '.' column CMP literal ']'        filter rows
//            | '[' expr ':' expr ',' expr ':' expr ']'     2-D slice of a grid
//            | '.' IDENT '(' args ')'                      method call (insert)
//
// Blank lines and lines starting with '#' are ignored.

#include "cellsync/error.hpp"
#include "cellsync/snapshot.hpp"

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cellsync::minitable {

using Cell = std::variant<double, std::string, bool>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> data;  // column-major, data[c][r]

  std::size_t rows() const { return data.empty() ? 0 : data.front().size(); }
  std::ptrdiff_t find(std::string_view column) const;

  static Table from_rows(std::vector<std::string> columns, const std::vector<std::vector<Cell>>& rows);
  bool operator==(const Table&) const = default;
};

/// Rectangular grid of numbers. Storage is shared and never mutated.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::shared_ptr<const std::vector<double>> cells;

  double at(std::size_t r, std::size_t c) const { return (*cells)[r * cols + c]; }
  static Grid make(std::size_t rows, std::size_t cols, std::vector<double> values);
  bool operator==(const Grid& other) const;
};

using Value = std::variant<Table, Grid, double, std::string, bool>;
using Env = std::map<std::string, Value, std::less<>>;

/// Error raised while parsing or evaluating, with the 1-based source line.
class ScriptError : public Error {
 public:
  ScriptError(ErrorCode code, int line, const std::string& message)
      : Error(code, "line " + std::to_string(line) + ": " + message), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  struct Literal { Cell value; };
  struct List { std::vector<Cell> items; };
  struct Var { std::string name; };
  struct Call { std::string name; std::vector<ExprPtr> args; };
  struct Method { ExprPtr target; std::string name; std::vector<ExprPtr> args; };
  struct Filter { ExprPtr base; ExprPtr mask_table; std::string column; std::string op; Cell rhs; };
  struct Slice { ExprPtr base; ExprPtr r0, r1, c0, c1; };

  std::variant<Literal, List, Var, Call, Method, Filter, Slice> node;
};

struct Stmt {
  int line = 0;
  std::string target;  // empty for expression statements
  ExprPtr value;
};

using Program = std::vector<Stmt>;

Program parse_program(std::string_view text);

std::string type_of(const Value& v);
std::string canonical_body(const Value& v);
VariableSnapshot snapshot(const Value& v, std::string name = {});

using Builtin = std::function<Value(std::span<const Value> args)>;

/// Evaluator with a table of callable builtins. Evaluation never mutates the
/// input environment.
class Interpreter {
 public:
  /// Installs the standard builtins: move_col, drop_col, concat_rows,
  /// sort_by, head, zeros, gradient, load (over registered fixtures).
  Interpreter();

  void register_builtin(std::string name, Builtin fn);
  void add_fixture(std::string name, Value value);
  bool has_builtin(std::string_view name) const;

  Env eval(const Program& program, const Env& env) const;
  Value eval_expr(const Expr& expr, const Env& env, int line) const;

 private:
  std::map<std::string, Builtin, std::less<>> builtins_;
  std::shared_ptr<std::map<std::string, Value, std::less<>>> fixtures_;
};

Env eval_program(const Program& program, const Env& env);

/// Table operations shared by the evaluator and builtins; throw ScriptError.
Table filter_rows(const Table& base, const Table& mask_source, std::string_view column, std::string_view op,
                  const Cell& rhs, int line);
Table insert_column(const Table& t, double index, const std::string& name, const std::vector<Cell>& values, int line);
Table move_column(const Table& t, const std::string& name, double index, int line);
Table drop_column(const Table& t, const std::string& name, int line);

/// A deterministic census-like table (age, education, sex, income, hours).
Table census_fixture();

}  // namespace cellsync::minitable
