#include "patchlink/provider_socket.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>

#include "patchlink/error.hpp"

namespace patchlink {

using json = nlohmann::json;

LineSocketClient::LineSocketClient(std::filesystem::path socket_path) : path_(std::move(socket_path)) {}

LineSocketClient::~LineSocketClient() {
  if (fd_ >= 0) ::close(fd_);
}

void LineSocketClient::connect_locked() {
  if (fd_ >= 0) return;
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  const std::string p = path_.string();
  if (p.size() >= sizeof(addr.sun_path)) throw Error(Errc::invalid_argument, "socket path too long: " + p);
  std::memcpy(addr.sun_path, p.c_str(), p.size() + 1);
  fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw Error(Errc::registry_unreachable, "socket() failed");
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(Errc::registry_unreachable, "cannot connect to provider socket " + p + ": " + std::strerror(errno));
  }
  buffer_.clear();
}

json LineSocketClient::call(const json& request) {
  std::lock_guard lock(mu_);
  connect_locked();
  const std::string line = request.dump() + "\n";
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = ::send(fd_, line.data() + off, line.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd_);
      fd_ = -1;
      throw Error(Errc::registry_unreachable, "provider socket write failed");
    }
    off += static_cast<std::size_t>(n);
  }
  while (true) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      const std::string response = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      try {
        return json::parse(response);
      } catch (const json::parse_error& e) {
        throw Error(Errc::malformed_document, std::string("bad provider response: ") + e.what());
      }
    }
    char buf[4096];
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      ::close(fd_);
      fd_ = -1;
      throw Error(Errc::registry_unreachable, "provider closed the connection");
    }
    buffer_.append(buf, static_cast<std::size_t>(n));
  }
}

json chunk_request(const char* kind, const ChunkEncoding& chunk) {
  return json{{"kind", kind},
              {"input_ids", chunk.input_ids},
              {"attention_mask", chunk.attention_mask},
              {"token_type_ids", chunk.token_type_ids}};
}

double SocketVfcProvider::score(const ChunkEncoding& chunk) const {
  const json r = client_->call(chunk_request("vfc", chunk));
  if (!r.contains("probability") || !r["probability"].is_number())
    throw Error(Errc::malformed_document, "provider response lacks 'probability'");
  const double p = r["probability"].get<double>();
  if (!std::isfinite(p) || p < 0.0 || p > 1.0)
    throw Error(Errc::malformed_document, "provider probability outside [0,1]");
  return p;
}

TypeDistribution SocketTypeProvider::score(const ChunkEncoding& chunk) const {
  const json r = client_->call(chunk_request("type", chunk));
  if (!r.contains("probabilities") || !r["probabilities"].is_array() ||
      r["probabilities"].size() != kTrainedClassCount)
    throw Error(Errc::malformed_document, "provider response needs 10 'probabilities'");
  TypeDistribution d;
  double sum = 0.0;
  for (std::size_t i = 0; i < kTrainedClassCount; ++i) {
    const double p = r["probabilities"][i].get<double>();
    if (!std::isfinite(p) || p < 0.0) throw Error(Errc::malformed_document, "negative type probability");
    d.probs[index_of(kTrainedClasses[i])] = p;
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error(Errc::malformed_document, "type probabilities do not sum to 1");
  return d;
}

std::vector<double> SocketEmbeddingProvider::embed(std::string_view text) const {
  const json r = client_->call(json{{"kind", "embed"}, {"text", std::string(text)}});
  if (!r.contains("embedding") || !r["embedding"].is_array() || r["embedding"].size() != dim_)
    throw Error(Errc::malformed_document, "provider embedding has the wrong dimension");
  auto v = r["embedding"].get<std::vector<double>>();
  for (double x : v)
    if (!std::isfinite(x)) throw Error(Errc::malformed_document, "non-finite embedding value");
  return v;
}

}  // namespace patchlink
