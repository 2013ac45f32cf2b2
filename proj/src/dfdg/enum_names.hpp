#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <utility>

#include "dfdg/common.hpp"

namespace dfdg {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<std::string_view, E>, N>;

/// Case-insensitive, '-' and '_' interchangeable.
template <typename E, std::size_t N>
E lookup_name(const NameTable<E, N>& table, std::string_view s, std::string_view what) {
  std::string key(s);
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return c == '-' ? '_' : static_cast<char>(std::toupper(c)); });
  for (const auto& [name, value] : table) {
    if (name == key) return value;
  }
  fail(ErrorCode::Config, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string name_of(const NameTable<E, N>& table, E v) {
  for (const auto& [name, value] : table) {
    if (value == v) return std::string(name);
  }
  fail(ErrorCode::Internal, "unnamed enum value");
}

}  // namespace dfdg
