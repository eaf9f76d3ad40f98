#pragma once

#include <string>
#include <string_view>

namespace kbsql::detail {

// "https://host:8443/v1/" -> {"https://host:8443", "/v1"}
struct Endpoint {
  std::string origin;
  std::string path_prefix;
};

inline Endpoint split_endpoint(std::string_view url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string_view::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  Endpoint ep;
  if (path_start == std::string_view::npos) {
    ep.origin = std::string(url);
  } else {
    ep.origin = std::string(url.substr(0, path_start));
    ep.path_prefix = std::string(url.substr(path_start));
  }
  while (!ep.path_prefix.empty() && ep.path_prefix.back() == '/') ep.path_prefix.pop_back();
  if (scheme_end == std::string_view::npos) ep.origin = "http://" + ep.origin;
  return ep;
}

}  // namespace kbsql::detail
