#include <chrono>
#include <thread>

#include "cir/annotate.hpp"
#include "cir/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace cir {
namespace {

using nlohmann::json;

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "expected an http:// endpoint, got '" + url + "'");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

json post_json(const RemoteOptions& opt, const json& body) {
  const Endpoint ep = split_url(opt.url);
  httplib::Client client(ep.origin);
  const auto timeout = std::chrono::milliseconds(opt.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  std::string last_error = "no attempt made";
  const int attempts = std::max(1, opt.retries + 1);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
    }
    auto res = client.Post(ep.path, body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kRemote,
                  opt.url + " answered HTTP " + std::to_string(res->status));
    }
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kRemote,
                  opt.url + " returned malformed JSON: " + e.what());
    }
  }
  throw Error(ErrorCode::kRemote, opt.url + " failed after " +
                                      std::to_string(attempts) +
                                      " attempt(s): " + last_error);
}

}  // namespace

RemoteGenerator::RemoteGenerator(RemoteOptions options)
    : options_(std::move(options)) {
  split_url(options_.url);
}

std::string RemoteGenerator::generate(const std::string& prompt) {
  const json res = post_json(options_, json{{"prompt", prompt}});
  if (!res.contains("text") || !res["text"].is_string()) {
    throw Error(ErrorCode::kRemote, options_.url + ": response lacks \"text\"");
  }
  return res["text"].get<std::string>();
}

RemoteJudge::RemoteJudge(RemoteOptions options) : options_(std::move(options)) {
  split_url(options_.url);
}

int RemoteJudge::score(const std::string& conclusion,
                       const std::string& target_descriptor) {
  const json res = post_json(
      options_, json{{"conclusion", conclusion}, {"target", target_descriptor}});
  if (!res.contains("score") || !res["score"].is_number_integer()) {
    throw Error(ErrorCode::kRemote,
                options_.url + ": response lacks integer \"score\"");
  }
  const int s = res["score"].get<int>();
  if (s < 1 || s > 5) {
    throw Error(ErrorCode::kRemote, options_.url + ": score " +
                                        std::to_string(s) + " outside 1..5");
  }
  return s;
}

}  // namespace cir
