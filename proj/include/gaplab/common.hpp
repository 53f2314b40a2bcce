#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gaplab {

/// Bad user input: malformed config, invalid arguments, missing files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Failure while running an otherwise valid request (divergence, IO).
struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Broken internal invariant.
struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

enum class Lang : std::uint8_t { A = 0, B = 1 };

inline Lang other(Lang l) { return l == Lang::A ? Lang::B : Lang::A; }
inline const char* lang_name(Lang l) { return l == Lang::A ? "A" : "B"; }
Lang parse_lang(std::string_view s);

struct Direction {
  Lang src = Lang::A;
  Lang tgt = Lang::B;
  friend bool operator==(const Direction&, const Direction&) = default;
};

inline constexpr Direction kAtoB{Lang::A, Lang::B};
inline constexpr Direction kBtoA{Lang::B, Lang::A};

std::string to_string(Direction d);

/// 64-bit FNV-1a. Stable across platforms; used for vocab/config/checkpoint hashes.
class Fnv64 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace gaplab
