#include "cellsync/snapshot.hpp"

#include "cellsync/error.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>

namespace cellsync {

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string format_number(double value) {
  if (std::isfinite(value) && value == std::trunc(value) && std::fabs(value) < 1e15) {
    auto whole = static_cast<std::int64_t>(value);
    return std::to_string(whole);
  }
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string canonical_json(const nlohmann::json& value) {
  switch (value.type()) {
    case nlohmann::json::value_t::number_float:
      return format_number(value.get<double>());
    case nlohmann::json::value_t::number_integer:
      return format_number(static_cast<double>(value.get<std::int64_t>()));
    case nlohmann::json::value_t::number_unsigned:
      return format_number(static_cast<double>(value.get<std::uint64_t>()));
    case nlohmann::json::value_t::array: {
      std::string out = "[";
      bool first = true;
      for (const auto& v : value) {
        if (!first) out += ',';
        first = false;
        out += canonical_json(v);
      }
      return out + "]";
    }
    case nlohmann::json::value_t::object: {
      std::string out = "{";
      bool first = true;
      for (const auto& [k, v] : value.items()) {
        if (!first) out += ',';
        first = false;
        out += nlohmann::json(k).dump() + ":" + canonical_json(v);
      }
      return out + "}";
    }
    default:
      return value.dump();
  }
}

VariableSnapshot VariableSnapshot::make(std::string name, std::string type, std::string body) {
  VariableSnapshot s;
  s.hash = sha256_hex(type + "\n" + body);
  s.name = std::move(name);
  s.type = std::move(type);
  s.body = std::move(body);
  return s;
}

nlohmann::json VariableSnapshot::to_json() const {
  return nlohmann::json{{"name", name}, {"type", type}, {"hash", hash}, {"value", nlohmann::json::parse(body)}};
}

VariableSnapshot VariableSnapshot::from_json(const nlohmann::json& j) {
  try {
    VariableSnapshot s;
    s.name = j.value("name", "");
    s.type = j.at("type").get<std::string>();
    s.body = canonical_json(j.at("value"));
    s.hash = j.at("hash").get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProtocolError, std::string("malformed snapshot: ") + e.what());
  }
}

}  // namespace cellsync
