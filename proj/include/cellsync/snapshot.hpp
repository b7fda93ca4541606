#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>

namespace cellsync {

/// Immutable, typed, hashed copy of one variable's value. `body` is canonical
/// JSON text; `hash` is the lowercase hex SHA-256 of "<type>\n<body>", so two
/// backends agree on the hash whenever they agree on the canonical bytes.
struct VariableSnapshot {
  std::string name;
  std::string type;
  std::string body;
  std::string hash;

  static VariableSnapshot make(std::string name, std::string type, std::string body);

  /// {"name":..., "type":..., "hash":..., "value": <body parsed as JSON>}
  nlohmann::json to_json() const;
  static VariableSnapshot from_json(const nlohmann::json& j);

  bool operator==(const VariableSnapshot&) const = default;
};

std::string sha256_hex(std::string_view data);

/// Whole values print as integers ("65", not "65.0"); everything else uses
/// the shortest representation that round-trips.
std::string format_number(double value);

/// Canonical JSON rendering: compact, keys in document order, numbers through
/// format_number. Used to re-canonicalize bodies received from other backends.
std::string canonical_json(const nlohmann::json& value);

}  // namespace cellsync
