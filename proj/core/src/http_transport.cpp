#include <httplib.h>

#include <fmt/format.h>

#include "semuq/clients.hpp"
#include "semuq/error.hpp"

namespace semuq {

namespace {

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(const EndpointConfig& cfg) {
    // httplib wants scheme://host[:port]; anything after that is a path
    // prefix for every request.
    const std::string& url = cfg.base_url;
    const auto scheme_end = url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url.find('/', host_start);
    origin_ = url.substr(0, path_start);
    if (path_start != std::string::npos) {
      prefix_ = url.substr(path_start);
      while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }
    secs_ = static_cast<time_t>(cfg.timeout_s);
    usecs_ = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs_)) * 1e6);
  }

  HttpResponse post(const std::string& path, const std::string& body,
                    const Headers& headers) override {
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    // httplib::Client serializes requests internally; one client per call
    // keeps concurrent workers independent.
    httplib::Client client(origin_);
    client.set_connection_timeout(secs_, usecs_);
    client.set_read_timeout(secs_, usecs_);
    client.set_write_timeout(secs_, usecs_);
    auto res = client.Post(prefix_ + path, h, body, "application/json");
    if (!res) {
      throw TransportError(
          fmt::format("POST {}{}{} failed: {}", origin_, prefix_, path, httplib::to_string(res.error())),
          1);
    }
    return {res->status, res->body};
  }

 private:
  std::string origin_;
  std::string prefix_;
  time_t secs_ = 0;
  time_t usecs_ = 0;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(const EndpointConfig& cfg) {
  cfg.validate();
  return std::make_unique<HttplibTransport>(cfg);
}

}  // namespace semuq
