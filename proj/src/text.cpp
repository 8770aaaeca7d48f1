#include "dialfuse/text.hpp"

#include <cctype>

namespace dialfuse {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

// Length of a bracketed marker starting at s[i] ("[value_time]", "<user>"),
// or 0 when s[i] does not open one.
std::size_t marker_length(std::string_view s, std::size_t i) {
  char open = s[i];
  char close = open == '[' ? ']' : open == '<' ? '>' : '\0';
  if (close == '\0') return 0;
  std::size_t j = i + 1;
  while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
  if (j == i + 1 || j >= s.size() || s[j] != close) return 0;
  return j - i + 1;
}

bool is_joiner(char c) {
  return c == ':' || c == '.' || c == ',' || c == '\'' || c == '-' || c == '/';
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string squash_spaces(std::string_view s) { return join(split_whitespace(s), " "); }

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (is_space(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
  };
  for (std::size_t i = 0; i < s.size();) {
    auto c = static_cast<unsigned char>(s[i]);
    if (is_space(c)) {
      flush();
      ++i;
      continue;
    }
    if (cur.empty()) {
      if (std::size_t n = marker_length(s, i); n > 0) {
        out.emplace_back(s.substr(i, n));
        i += n;
        continue;
      }
    }
    if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(c));
      ++i;
      continue;
    }
    bool inner = is_joiner(static_cast<char>(c)) && !cur.empty() &&
                 is_word_byte(static_cast<unsigned char>(cur.back())) && i + 1 < s.size() &&
                 std::isalnum(static_cast<unsigned char>(s[i + 1]));
    if (inner) {
      cur.push_back(static_cast<char>(c));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  auto glues_left = [](const std::string& t) {
    return t == "," || t == "." || t == "?" || t == "!" || t == ":" || t == ")" || t == "=";
  };
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && !glues_left(tokens[i]) && tokens[i - 1] != "=" && tokens[i - 1] != "(") out += ' ';
    out += tokens[i];
  }
  return out;
}

std::optional<std::size_t> find_word(std::string_view haystack, std::string_view needle,
                                     std::size_t from) {
  if (needle.empty()) return std::nullopt;
  std::string h = to_lower(haystack);
  std::string n = to_lower(needle);
  for (std::size_t pos = h.find(n, from); pos != std::string::npos; pos = h.find(n, pos + 1)) {
    bool left_ok = pos == 0 || !is_word_byte(static_cast<unsigned char>(h[pos - 1]));
    std::size_t end = pos + n.size();
    bool right_ok = end >= h.size() || !is_word_byte(static_cast<unsigned char>(h[end]));
    if (left_ok && right_ok) return pos;
  }
  return std::nullopt;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view key) {
  SplitMix64 rng(seed ^ fnv1a64(key));
  return rng.next();
}

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t SplitMix64::below(std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return x % n;
}

double SplitMix64::unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

}  // namespace dialfuse
