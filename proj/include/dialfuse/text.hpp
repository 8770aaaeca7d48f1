#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dialfuse {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

// Collapses runs of whitespace into single spaces and trims the ends.
std::string squash_spaces(std::string_view s);

std::vector<std::string> split_whitespace(std::string_view s);

// Whitespace + punctuation splitter used for budget accounting, BLEU and
// the toy model. Bracketed markers ("[train_id]", "<user>") stay whole, and
// ':' '.' ',' '\'' '-' stay inside a token when flanked by alphanumerics,
// so "10:15" and "don't" are single tokens.
std::vector<std::string> tokenize(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Inverse of tokenize for generated text: no space before ", . ? ! : )" or
// around "=", single spaces elsewhere.
std::string detokenize(const std::vector<std::string>& tokens);

// Case-insensitive search for `needle` in `haystack` where the match is not
// flanked by alphanumerics or '_'. Returns the byte offset of the first match.
std::optional<std::size_t> find_word(std::string_view haystack, std::string_view needle,
                                     std::size_t from = 0);

inline bool mentions(std::string_view text, std::string_view value) {
  return !value.empty() && find_word(text, value).has_value();
}

// 64-bit FNV-1a. Stable across platforms; used to derive per-item seeds.
std::uint64_t fnv1a64(std::string_view s);

std::uint64_t mix_seed(std::uint64_t seed, std::string_view key);

// SplitMix64. Platform-stable, unlike the std distributions.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Uniform double in [0, 1).
  double unit();

 private:
  std::uint64_t state_;
};

}  // namespace dialfuse
