#pragma once

#include <regex>
#include <string>

#include "dialfuse/error.hpp"

namespace dialfuse::detail {

struct Endpoint {
  std::string base;  // scheme://host:port
  std::string path;
};

inline Endpoint split_endpoint(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ValidationError("bad endpoint URL '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

}  // namespace dialfuse::detail
