#include "cellsync/minitable.hpp"

#include <algorithm>
#include <cmath>

namespace cellsync::minitable {

namespace {

// Line 0 means "inside a builtin"; the call site re-raises with its line.
[[noreturn]] void raise(ErrorCode code, int line, const std::string& msg) {
  if (line == 0) throw Error(code, msg);
  throw ScriptError(code, line, msg);
}

std::string cell_type(const Cell& c) {
  if (std::holds_alternative<double>(c)) return "num";
  if (std::holds_alternative<std::string>(c)) return "str";
  return "bool";
}

bool compare(const Cell& lhs, std::string_view op, const Cell& rhs, int line) {
  if (lhs.index() != rhs.index())
    raise(ErrorCode::TypeError, line, "cannot compare " + cell_type(lhs) + " with " + cell_type(rhs));
  if (op == "==") return lhs == rhs;
  if (op == "!=") return lhs != rhs;
  if (std::holds_alternative<bool>(lhs)) raise(ErrorCode::TypeError, line, "booleans only support == and !=");
  if (op == "<") return lhs < rhs;
  if (op == "<=") return lhs <= rhs;
  if (op == ">") return lhs > rhs;
  if (op == ">=") return lhs >= rhs;
  raise(ErrorCode::SyntaxError, line, "unknown comparison '" + std::string(op) + "'");
}

std::size_t to_index(double v, std::size_t upper, int line, const char* what) {
  if (v != std::trunc(v) || v < 0) raise(ErrorCode::TypeError, line, std::string(what) + " must be a non-negative integer");
  if (v > static_cast<double>(upper))
    raise(ErrorCode::IndexOutOfRange, line,
          std::string(what) + " " + format_number(v) + " is out of range 0.." + std::to_string(upper));
  return static_cast<std::size_t>(v);
}

const Table& want_table(const Value& v, int line, const char* what) {
  if (const auto* t = std::get_if<Table>(&v)) return *t;
  raise(ErrorCode::TypeError, line, std::string(what) + " must be a table, got " + type_of(v));
}

double want_num(const Value& v, int line, const char* what) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  raise(ErrorCode::TypeError, line, std::string(what) + " must be a number, got " + type_of(v));
}

const std::string& want_str(const Value& v, int line, const char* what) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  raise(ErrorCode::TypeError, line, std::string(what) + " must be a string, got " + type_of(v));
}

void want_arity(std::span<const Value> args, std::size_t n, const char* fn) {
  if (args.size() != n)
    throw Error(ErrorCode::TypeError, std::string(fn) + " takes " + std::to_string(n) + " arguments, got " +
                                          std::to_string(args.size()));
}

}  // namespace

Table filter_rows(const Table& base, const Table& mask_source, std::string_view column, std::string_view op,
                  const Cell& rhs, int line) {
  auto col = mask_source.find(column);
  if (col < 0) raise(ErrorCode::IndexOutOfRange, line, "no column '" + std::string(column) + "'");
  if (mask_source.rows() != base.rows()) raise(ErrorCode::TypeError, line, "filter mask length differs from table");
  Table out;
  out.columns = base.columns;
  out.data.resize(base.columns.size());
  const auto& values = mask_source.data[static_cast<std::size_t>(col)];
  for (std::size_t r = 0; r < base.rows(); ++r) {
    if (!compare(values[r], op, rhs, line)) continue;
    for (std::size_t c = 0; c < base.columns.size(); ++c) out.data[c].push_back(base.data[c][r]);
  }
  return out;
}

Table insert_column(const Table& t, double index, const std::string& name, const std::vector<Cell>& values, int line) {
  std::size_t at = to_index(index, t.columns.size(), line, "insert position");
  if (t.find(name) >= 0) raise(ErrorCode::TypeError, line, "column '" + name + "' already exists");
  std::vector<Cell> column;
  if (values.size() == 1) {
    column.assign(t.rows(), values.front());
  } else if (values.size() == t.rows() || t.columns.empty()) {
    column = values;
  } else {
    raise(ErrorCode::TypeError, line,
          "column '" + name + "' has " + std::to_string(values.size()) + " values for " + std::to_string(t.rows()) + " rows");
  }
  Table out = t;
  out.columns.insert(out.columns.begin() + static_cast<std::ptrdiff_t>(at), name);
  out.data.insert(out.data.begin() + static_cast<std::ptrdiff_t>(at), std::move(column));
  return out;
}

Table move_column(const Table& t, const std::string& name, double index, int line) {
  auto from = t.find(name);
  if (from < 0) raise(ErrorCode::IndexOutOfRange, line, "no column '" + name + "'");
  if (t.columns.empty()) raise(ErrorCode::IndexOutOfRange, line, "table has no columns");
  std::size_t to = to_index(index, t.columns.size() - 1, line, "move position");
  Table out = t;
  std::string col_name = out.columns[static_cast<std::size_t>(from)];
  auto col_data = std::move(out.data[static_cast<std::size_t>(from)]);
  out.columns.erase(out.columns.begin() + from);
  out.data.erase(out.data.begin() + from);
  out.columns.insert(out.columns.begin() + static_cast<std::ptrdiff_t>(to), std::move(col_name));
  out.data.insert(out.data.begin() + static_cast<std::ptrdiff_t>(to), std::move(col_data));
  return out;
}

Table drop_column(const Table& t, const std::string& name, int line) {
  auto at = t.find(name);
  if (at < 0) raise(ErrorCode::IndexOutOfRange, line, "no column '" + name + "'");
  Table out = t;
  out.columns.erase(out.columns.begin() + at);
  out.data.erase(out.data.begin() + at);
  return out;
}

Interpreter::Interpreter() : fixtures_(std::make_shared<std::map<std::string, Value, std::less<>>>()) {
  register_builtin("move_col", [](std::span<const Value> a) -> Value {
    want_arity(a, 3, "move_col");
    return move_column(want_table(a[0], 0, "move_col table"), want_str(a[1], 0, "column name"),
                       want_num(a[2], 0, "position"), 0);
  });
  register_builtin("drop_col", [](std::span<const Value> a) -> Value {
    want_arity(a, 2, "drop_col");
    return drop_column(want_table(a[0], 0, "drop_col table"), want_str(a[1], 0, "column name"), 0);
  });
  register_builtin("concat_rows", [](std::span<const Value> a) -> Value {
    want_arity(a, 2, "concat_rows");
    const Table& x = want_table(a[0], 0, "first argument");
    const Table& y = want_table(a[1], 0, "second argument");
    if (x.columns != y.columns) throw Error(ErrorCode::TypeError, "concat_rows needs identical columns");
    Table out = x;
    for (std::size_t c = 0; c < out.data.size(); ++c)
      out.data[c].insert(out.data[c].end(), y.data[c].begin(), y.data[c].end());
    return out;
  });
  register_builtin("sort_by", [](std::span<const Value> a) -> Value {
    want_arity(a, 2, "sort_by");
    const Table& t = want_table(a[0], 0, "sort_by table");
    auto col = t.find(want_str(a[1], 0, "column name"));
    if (col < 0) throw Error(ErrorCode::IndexOutOfRange, "no column '" + std::get<std::string>(a[1]) + "'");
    const auto& key = t.data[static_cast<std::size_t>(col)];
    for (const auto& c : key)
      if (c.index() != key.front().index()) throw Error(ErrorCode::TypeError, "sort_by needs a single-typed column");
    std::vector<std::size_t> order(t.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return key[l] < key[r]; });
    Table out;
    out.columns = t.columns;
    out.data.resize(t.columns.size());
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      for (auto r : order) out.data[c].push_back(t.data[c][r]);
    return out;
  });
  register_builtin("head", [](std::span<const Value> a) -> Value {
    want_arity(a, 2, "head");
    const Table& t = want_table(a[0], 0, "head table");
    std::size_t n = std::min(to_index(want_num(a[1], 0, "row count"), SIZE_MAX / 2, 0, "row count"), t.rows());
    Table out = t;
    for (auto& col : out.data) col.resize(n);
    return out;
  });
  auto grid_builder = [](bool ramp) {
    return [ramp](std::span<const Value> a) -> Value {
      want_arity(a, 2, ramp ? "gradient" : "zeros");
      std::size_t h = to_index(want_num(a[0], 0, "height"), 1u << 14, 0, "height");
      std::size_t w = to_index(want_num(a[1], 0, "width"), 1u << 14, 0, "width");
      std::vector<double> v(h * w, 0.0);
      if (ramp)
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < w; ++c) v[r * w + c] = static_cast<double>((r + c) % 256);
      return Grid::make(h, w, std::move(v));
    };
  };
  register_builtin("zeros", grid_builder(false));
  register_builtin("gradient", grid_builder(true));
  std::weak_ptr<std::map<std::string, Value, std::less<>>> fixtures = fixtures_;
  register_builtin("load", [fixtures](std::span<const Value> a) -> Value {
    want_arity(a, 1, "load");
    const std::string& name = want_str(a[0], 0, "fixture name");
    if (auto table = fixtures.lock()) {
      if (auto it = table->find(name); it != table->end()) return it->second;
    }
    throw Error(ErrorCode::IndexOutOfRange, "no fixture named '" + name + "'");
  });
}

void Interpreter::register_builtin(std::string name, Builtin fn) { builtins_[std::move(name)] = std::move(fn); }

void Interpreter::add_fixture(std::string name, Value value) { (*fixtures_)[std::move(name)] = std::move(value); }

bool Interpreter::has_builtin(std::string_view name) const { return builtins_.find(name) != builtins_.end(); }

Value Interpreter::eval_expr(const Expr& expr, const Env& env, int line) const {
  return std::visit(
      [&](const auto& n) -> Value {
        using N = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<N, Expr::Literal>) {
          return std::visit([](const auto& v) -> Value { return v; }, n.value);
        } else if constexpr (std::is_same_v<N, Expr::List>) {
          raise(ErrorCode::TypeError, line, "a list literal is only allowed as insert values");
        } else if constexpr (std::is_same_v<N, Expr::Var>) {
          auto it = env.find(n.name);
          if (it == env.end()) raise(ErrorCode::UnboundVariable, line, "name '" + n.name + "' is not defined");
          return it->second;
        } else if constexpr (std::is_same_v<N, Expr::Call>) {
          auto fn = builtins_.find(n.name);
          if (fn == builtins_.end()) raise(ErrorCode::UnknownFunction, line, "unknown function '" + n.name + "'");
          std::vector<Value> args;
          for (const auto& a : n.args) args.push_back(eval_expr(*a, env, line));
          try {
            return fn->second(args);
          } catch (const ScriptError&) {
            throw;
          } catch (const Error& e) {
            raise(e.code(), line, n.name + ": " + e.what());
          }
        } else if constexpr (std::is_same_v<N, Expr::Method>) {
          if (n.name != "insert") raise(ErrorCode::UnknownFunction, line, "unknown method '" + n.name + "'");
          if (n.args.size() != 3) raise(ErrorCode::TypeError, line, "insert takes (position, name, values)");
          Value target = eval_expr(*n.target, env, line);
          const Table& t = want_table(target, line, "insert target");
          double pos = want_num(eval_expr(*n.args[0], env, line), line, "insert position");
          std::string name = want_str(eval_expr(*n.args[1], env, line), line, "column name");
          std::vector<Cell> values;
          if (const auto* list = std::get_if<Expr::List>(&n.args[2]->node)) {
            values = list->items;
            if (values.size() == 1 && t.rows() != 1) raise(ErrorCode::TypeError, line, "value list length differs from row count");
            if (values.empty() && t.rows() != 0) raise(ErrorCode::TypeError, line, "value list length differs from row count");
          } else {
            Value v = eval_expr(*n.args[2], env, line);
            if (auto* d = std::get_if<double>(&v)) values.push_back(*d);
            else if (auto* s = std::get_if<std::string>(&v)) values.push_back(*s);
            else if (auto* b = std::get_if<bool>(&v)) values.push_back(*b);
            else raise(ErrorCode::TypeError, line, "insert values must be a literal or a literal list");
          }
          return insert_column(t, pos, name, values, line);
        } else if constexpr (std::is_same_v<N, Expr::Filter>) {
          Value base = eval_expr(*n.base, env, line);
          Value mask = eval_expr(*n.mask_table, env, line);
          return filter_rows(want_table(base, line, "filtered value"), want_table(mask, line, "filter mask"), n.column,
                             n.op, n.rhs, line);
        } else {
          Value base = eval_expr(*n.base, env, line);
          const auto* g = std::get_if<Grid>(&base);
          if (!g) raise(ErrorCode::TypeError, line, "only grids can be sliced, got " + type_of(base));
          auto bound = [&](const ExprPtr& e, std::size_t upper, const char* what) {
            return to_index(want_num(eval_expr(*e, env, line), line, what), upper, line, what);
          };
          std::size_t r0 = bound(n.r0, g->rows, "row start");
          std::size_t r1 = bound(n.r1, g->rows, "row end");
          std::size_t c0 = bound(n.c0, g->cols, "column start");
          std::size_t c1 = bound(n.c1, g->cols, "column end");
          if (r0 > r1 || c0 > c1) raise(ErrorCode::IndexOutOfRange, line, "slice start exceeds end");
          if (r0 == 0 && c0 == 0 && r1 == g->rows && c1 == g->cols) return *g;
          std::vector<double> v;
          v.reserve((r1 - r0) * (c1 - c0));
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c) v.push_back(g->at(r, c));
          return Grid::make(r1 - r0, c1 - c0, std::move(v));
        }
      },
      expr.node);
}

Env Interpreter::eval(const Program& program, const Env& env) const {
  Env out = env;
  for (const auto& stmt : program) {
    Value v = eval_expr(*stmt.value, out, stmt.line);
    if (!stmt.target.empty()) out.insert_or_assign(stmt.target, std::move(v));
  }
  return out;
}

Env eval_program(const Program& program, const Env& env) {
  static const Interpreter interpreter;
  return interpreter.eval(program, env);
}

}  // namespace cellsync::minitable
