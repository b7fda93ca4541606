#include "cellsync/minitable.hpp"

#include <nlohmann/json.hpp>

namespace cellsync::minitable {

std::ptrdiff_t Table::find(std::string_view column) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == column) return static_cast<std::ptrdiff_t>(i);
  return -1;
}

Table Table::from_rows(std::vector<std::string> columns, const std::vector<std::vector<Cell>>& rows) {
  Table t;
  t.columns = std::move(columns);
  t.data.resize(t.columns.size());
  for (const auto& row : rows) {
    if (row.size() != t.columns.size()) throw Error(ErrorCode::TypeError, "row width differs from column count");
    for (std::size_t c = 0; c < row.size(); ++c) t.data[c].push_back(row[c]);
  }
  return t;
}

Grid Grid::make(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw Error(ErrorCode::TypeError, "grid data is not rows x cols");
  Grid g;
  g.rows = rows;
  g.cols = cols;
  g.cells = std::make_shared<const std::vector<double>>(std::move(values));
  return g;
}

bool Grid::operator==(const Grid& other) const {
  if (rows != other.rows || cols != other.cols) return false;
  if (cells == other.cells) return true;
  if (!cells || !other.cells) return rows * cols == 0;
  return *cells == *other.cells;
}

std::string type_of(const Value& v) {
  switch (v.index()) {
    case 0: return "table";
    case 1: return "grid";
    case 2: return "num";
    case 3: return "str";
    default: return "bool";
  }
}

namespace {

std::string cell_json(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_number(*d);
  if (const auto* s = std::get_if<std::string>(&c)) return nlohmann::json(*s).dump();
  return std::get<bool>(c) ? "true" : "false";
}

}  // namespace

// Object keys are emitted in sorted order so that canonical_json() of the
// parsed body reproduces these bytes exactly.
std::string canonical_body(const Value& v) {
  if (const auto* t = std::get_if<Table>(&v)) {
    std::string out = "{\"columns\":[";
    for (std::size_t c = 0; c < t->columns.size(); ++c) {
      if (c) out += ',';
      out += nlohmann::json(t->columns[c]).dump();
    }
    out += "],\"rows\":[";
    for (std::size_t r = 0; r < t->rows(); ++r) {
      if (r) out += ',';
      out += '[';
      for (std::size_t c = 0; c < t->columns.size(); ++c) {
        if (c) out += ',';
        out += cell_json(t->data[c][r]);
      }
      out += ']';
    }
    return out + "]}";
  }
  if (const auto* g = std::get_if<Grid>(&v)) {
    std::string out = "{\"data\":[";
    for (std::size_t r = 0; r < g->rows; ++r) {
      if (r) out += ',';
      out += '[';
      for (std::size_t c = 0; c < g->cols; ++c) {
        if (c) out += ',';
        out += format_number(g->at(r, c));
      }
      out += ']';
    }
    return out + "],\"shape\":[" + std::to_string(g->rows) + "," + std::to_string(g->cols) + "]}";
  }
  if (const auto* d = std::get_if<double>(&v)) return format_number(*d);
  if (const auto* s = std::get_if<std::string>(&v)) return nlohmann::json(*s).dump();
  return std::get<bool>(v) ? "true" : "false";
}

VariableSnapshot snapshot(const Value& v, std::string name) {
  return VariableSnapshot::make(std::move(name), type_of(v), canonical_body(v));
}

Table census_fixture() {
  struct Row {
    double age;
    const char* education;
    const char* sex;
    const char* income;
    double hours;
  };
  // Five Doctorate/Prof-school rows earn >50K and all five are Male.
  static const Row rows[] = {
      {39, "Bachelors", "Male", "<=50K", 40},    {50, "Bachelors", "Male", "<=50K", 13},
      {38, "HS-grad", "Male", "<=50K", 40},      {53, "11th", "Male", "<=50K", 40},
      {28, "Bachelors", "Female", "<=50K", 40},  {37, "Masters", "Female", "<=50K", 40},
      {49, "9th", "Female", "<=50K", 16},        {52, "HS-grad", "Male", ">50K", 45},
      {31, "Masters", "Female", ">50K", 50},     {42, "Bachelors", "Male", ">50K", 40},
      {37, "Some-college", "Male", ">50K", 80},  {30, "Bachelors", "Male", ">50K", 40},
      {23, "Bachelors", "Female", "<=50K", 30},  {32, "Assoc-acdm", "Male", "<=50K", 50},
      {40, "Assoc-voc", "Male", ">50K", 40},     {34, "7th-8th", "Male", "<=50K", 45},
      {25, "HS-grad", "Male", "<=50K", 35},      {43, "Masters", "Female", ">50K", 45},
      {54, "HS-grad", "Female", "<=50K", 20},    {35, "Doctorate", "Male", ">50K", 60},
      {59, "HS-grad", "Female", "<=50K", 40},    {56, "Prof-school", "Male", ">50K", 50},
      {19, "HS-grad", "Male", "<=50K", 40},      {54, "Some-college", "Male", ">50K", 60},
      {39, "Doctorate", "Female", "<=50K", 40},  {49, "Prof-school", "Male", ">50K", 50},
      {23, "Assoc-acdm", "Female", "<=50K", 52}, {66, "Doctorate", "Male", ">50K", 30},
      {71, "Prof-school", "Female", "<=50K", 10}, {45, "Doctorate", "Male", ">50K", 45},
      {68, "Masters", "Male", "<=50K", 20},      {64, "HS-grad", "Female", "<=50K", 12},
  };
  std::vector<std::vector<Cell>> out;
  for (const auto& r : rows) out.push_back({r.age, std::string(r.education), std::string(r.sex), std::string(r.income), r.hours});
  return Table::from_rows({"age", "education", "sex", "income", "hours"}, out);
}

}  // namespace cellsync::minitable
