#include "cellsync/minitable.hpp"

#include <cctype>
#include <charconv>
#include <optional>

namespace cellsync::minitable {

namespace {

enum class Tok { Ident, Number, String, Punct, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;  // identifier, punctuation, or decoded string
  double number = 0;
  std::size_t pos = 0;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return c >= '0' && c <= '9'; }

std::vector<Token> lex(std::string_view src, int line) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto fail = [&](const std::string& why) -> void {
    throw ScriptError(ErrorCode::SyntaxError, line, why + " at column " + std::to_string(i + 1));
  };
  while (i < src.size()) {
    char c = src[i];
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    Token t;
    t.pos = i;
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < src.size() && ident_char(src[j])) ++j;
      t.kind = Tok::Ident;
      t.text = std::string(src.substr(i, j - i));
      i = j;
    } else if (digit(c) || (c == '-' && i + 1 < src.size() && digit(src[i + 1]))) {
      std::size_t j = i + 1;
      while (j < src.size() && digit(src[j])) ++j;
      if (j + 1 < src.size() && src[j] == '.' && digit(src[j + 1])) {
        j += 1;
        while (j < src.size() && digit(src[j])) ++j;
      }
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && digit(src[k])) {
          while (k < src.size() && digit(src[k])) ++k;
          j = k;
        }
      }
      if (j < src.size() && ident_char(src[j])) fail("malformed number");
      t.kind = Tok::Number;
      t.text = std::string(src.substr(i, j - i));
      auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      if (res.ec != std::errc()) fail("number out of range");
      i = j;
    } else if (c == '"') {
      std::string s;
      std::size_t j = i + 1;
      bool closed = false;
      while (j < src.size()) {
        char d = src[j];
        if (d == '\\') {
          if (j + 1 >= src.size()) break;
          char e = src[j + 1];
          switch (e) {
            case 'n': s += '\n'; break;
            case 't': s += '\t'; break;
            default: s += e; break;
          }
          j += 2;
          continue;
        }
        if (d == '"') {
          closed = true;
          ++j;
          break;
        }
        s += d;
        ++j;
      }
      if (!closed) fail("unterminated string");
      t.kind = Tok::String;
      t.text = std::move(s);
      i = j;
    } else {
      static const char* two[] = {"<=", ">=", "==", "!="};
      bool matched = false;
      for (const char* op : two) {
        if (src.substr(i, 2) == op) {
          t.kind = Tok::Punct;
          t.text = op;
          i += 2;
          matched = true;
          break;
        }
      }
      if (!matched) {
        if (std::string_view("=[](),.:<>").find(c) == std::string_view::npos)
          fail(std::string("unexpected character '") + c + "'");
        t.kind = Tok::Punct;
        t.text = std::string(1, c);
        ++i;
      }
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.pos = src.size();
  out.push_back(end);
  return out;
}

class LineParser {
 public:
  LineParser(std::vector<Token> toks, int line) : toks_(std::move(toks)), line_(line) {}

  Stmt statement() {
    Stmt s;
    s.line = line_;
    if (peek().kind == Tok::Ident && peek(1).kind == Tok::Punct && peek(1).text == "=") {
      s.target = next().text;
      next();
    }
    s.value = expression();
    if (peek().kind != Tok::End) fail("unexpected '" + describe(peek()) + "'");
    return s;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    std::size_t k = std::min(pos_ + ahead, toks_.size() - 1);
    return toks_[k];
  }
  Token next() {
    Token t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }
  bool is_punct(std::string_view p, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::Punct && peek(ahead).text == p;
  }
  void expect(std::string_view p) {
    if (!is_punct(p)) fail("expected '" + std::string(p) + "' but found '" + describe(peek()) + "'");
    next();
  }
  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::End: return "end of line";
      case Tok::String: return "\"" + t.text + "\"";
      default: return t.text;
    }
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw ScriptError(ErrorCode::SyntaxError, line_, why + " at column " + std::to_string(peek().pos + 1));
  }

  static ExprPtr make(Expr::Literal v) { return std::make_shared<Expr>(Expr{std::move(v)}); }

  std::optional<Cell> literal() {
    const Token& t = peek();
    if (t.kind == Tok::Number) return Cell{next().number};
    if (t.kind == Tok::String) return Cell{next().text};
    if (t.kind == Tok::Ident && (t.text == "true" || t.text == "false")) return Cell{next().text == "true"};
    return std::nullopt;
  }

  ExprPtr expression() {
    ExprPtr e = primary();
    for (;;) {
      if (is_punct("[")) {
        next();
        e = subscript(std::move(e));
        expect("]");
      } else if (is_punct(".")) {
        next();
        if (peek().kind != Tok::Ident) fail("expected a method name after '.'");
        std::string name = next().text;
        if (!is_punct("(")) fail("expected '(' after method '" + name + "'");
        next();
        auto args = arguments();
        e = std::make_shared<Expr>(Expr{Expr::Method{std::move(e), std::move(name), std::move(args)}});
      } else {
        return e;
      }
    }
  }

  ExprPtr primary() {
    if (auto lit = literal()) return make(Expr::Literal{std::move(*lit)});
    const Token& t = peek();
    if (t.kind == Tok::Ident) {
      std::string name = next().text;
      if (is_punct("(")) {
        next();
        auto args = arguments();
        return std::make_shared<Expr>(Expr{Expr::Call{std::move(name), std::move(args)}});
      }
      return std::make_shared<Expr>(Expr{Expr::Var{std::move(name)}});
    }
    if (is_punct("[")) {
      next();
      Expr::List list;
      if (!is_punct("]")) {
        for (;;) {
          auto lit = literal();
          if (!lit) fail("list items must be literals");
          list.items.push_back(std::move(*lit));
          if (is_punct(",")) {
            next();
            continue;
          }
          break;
        }
      }
      expect("]");
      return std::make_shared<Expr>(Expr{std::move(list)});
    }
    fail("expected an expression but found '" + describe(t) + "'");
  }

  // Caller consumed '('; consumes through ')'.
  std::vector<ExprPtr> arguments() {
    std::vector<ExprPtr> args;
    if (is_punct(")")) {
      next();
      return args;
    }
    for (;;) {
      args.push_back(expression());
      if (is_punct(",")) {
        next();
        continue;
      }
      expect(")");
      return args;
    }
  }

  ExprPtr subscript(ExprPtr base) {
    if (peek().kind == Tok::Ident && is_punct(".", 1)) {
      Expr::Filter f;
      f.base = std::move(base);
      f.mask_table = std::make_shared<Expr>(Expr{Expr::Var{next().text}});
      next();
      if (peek().kind == Tok::Ident || peek().kind == Tok::String) {
        f.column = next().text;
      } else {
        fail("expected a column name");
      }
      static const char* ops[] = {"<", "<=", ">", ">=", "==", "!="};
      bool ok = false;
      for (const char* op : ops)
        if (is_punct(op)) ok = true;
      if (!ok) fail("expected a comparison operator");
      f.op = next().text;
      auto rhs = literal();
      if (!rhs) fail("filter comparisons take a literal right-hand side");
      f.rhs = std::move(*rhs);
      return std::make_shared<Expr>(Expr{std::move(f)});
    }
    Expr::Slice s;
    s.base = std::move(base);
    s.r0 = expression();
    expect(":");
    s.r1 = expression();
    expect(",");
    s.c0 = expression();
    expect(":");
    s.c1 = expression();
    return std::make_shared<Expr>(Expr{std::move(s)});
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int line_;
};

}  // namespace

Program parse_program(std::string_view text) {
  Program program;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first != std::string_view::npos && line[first] != '#') {
      program.push_back(LineParser(lex(line, line_no), line_no).statement());
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return program;
}

}  // namespace cellsync::minitable
