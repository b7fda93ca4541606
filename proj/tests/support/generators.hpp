#pragma once

// Random generators for property tests. Values are built from the kind
// grammar directly, without going through the engine's patterns.

#include "cellsync/template_engine.hpp"

#include <random>
#include <string>

namespace cellsync::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
  std::mt19937_64& rng() { return rng_; }

  std::string ident() {
    static const std::string first = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_";
    static const std::string rest = first + "0123456789";
    std::string s(1, first[below(first.size())]);
    std::size_t n = below(8);
    for (std::size_t i = 0; i < n; ++i) s += rest[below(rest.size())];
    return s;
  }

  std::string digits(std::size_t max_len) {
    std::string s;
    std::size_t n = 1 + below(max_len);
    for (std::size_t i = 0; i < n; ++i) s += static_cast<char>('0' + below(10));
    return s;
  }

  std::string number() {
    std::string s;
    if (chance(0.3)) s += '-';
    s += digits(4);
    if (chance(0.4)) s += "." + digits(3);
    if (chance(0.15)) s += std::string(chance(0.5) ? "e" : "E") + (chance(0.5) ? "-" : "") + digits(2);
    return s;
  }

  // Printable text including runs of spaces, quotes and backslashes (escaped).
  std::string string_literal() {
    static const std::string alphabet = "abcXYZ 019 ,.:;[]()<>=!$#%&*+-/?@^_{}|~'";
    std::string s = "\"";
    std::size_t n = below(10);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t pick = below(alphabet.size() + 4);
      if (pick == alphabet.size()) s += "\\\"";
      else if (pick == alphabet.size() + 1) s += "\\\\";
      else if (pick == alphabet.size() + 2) s += "  ";
      else if (pick == alphabet.size() + 3) s += "\t";
      else s += alphabet[pick];
    }
    return s + "\"";
  }

  std::string comparison() {
    static const char* ops[] = {"<", "<=", ">", ">=", "==", "!="};
    return ops[below(6)];
  }

  std::string value(BlankKind kind) {
    switch (kind) {
      case BlankKind::Ident: return ident();
      case BlankKind::ColName: return chance(0.7) ? ident() : string_literal();
      case BlankKind::Number: return number();
      case BlankKind::String: return string_literal();
      case BlankKind::Comparison: return comparison();
      case BlankKind::Expr: return comparison() + (chance(0.7) ? " " : "") + (chance(0.5) ? number() : string_literal());
      case BlankKind::Index: return digits(4);
    }
    return {};
  }

  BindingSet bindings(const TemplateSpec& t) {
    BindingSet b;
    for (const auto& blank : t.blanks) b[blank.name] = value(blank.kind);
    return b;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace cellsync::testing
