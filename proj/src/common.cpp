#include "gaplab/common.hpp"

#include <cstdio>

namespace gaplab {

Lang parse_lang(std::string_view s) {
  if (s == "A" || s == "a") return Lang::A;
  if (s == "B" || s == "b") return Lang::B;
  throw ConfigError("unknown language '" + std::string(s) + "' (expected A or B)");
}

std::string to_string(Direction d) {
  return std::string(lang_name(d.src)) + "->" + lang_name(d.tgt);
}

std::uint64_t fnv64(std::string_view bytes) {
  Fnv64 h;
  h.update(bytes);
  return h.digest();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace gaplab
