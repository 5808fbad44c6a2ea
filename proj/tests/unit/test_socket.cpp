#include <doctest.h>

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cstring>
#include <thread>

#include "patchlink/provider_socket.hpp"
#include "synth.hpp"

using namespace patchlink;
using nlohmann::json;

namespace {

// Answers each request line from a canned model until the peer hangs up.
void serve_one(int listener) {
  const int fd = ::accept(listener, nullptr, nullptr);
  if (fd < 0) return;
  std::string buf;
  char chunk[4096];
  for (;;) {
    const auto n = ::read(fd, chunk, sizeof chunk);
    if (n <= 0) break;
    buf.append(chunk, static_cast<std::size_t>(n));
    for (auto nl = buf.find('\n'); nl != std::string::npos; nl = buf.find('\n')) {
      const json req = json::parse(buf.substr(0, nl));
      buf.erase(0, nl + 1);
      json out;
      const std::string kind = req.at("kind");
      if (kind == "vfc") {
        out = {{"probability", req.at("input_ids").size() > 5 ? 0.75 : 0.25}};
      } else if (kind == "type") {
        std::vector<double> p(kTrainedClassCount, 0.0);
        p[2] = 1.0;  // A03
        out = {{"probabilities", p}};
      } else {
        out = {{"embedding", std::vector<double>{req.at("text").get<std::string>().size() * 1.0, 0.0, 1.0}}};
      }
      const std::string line = out.dump() + "\n";
      if (::write(fd, line.data(), line.size()) < 0) break;
    }
  }
  ::close(fd);
}

}  // namespace

TEST_CASE("socket providers") {
  synth::TempDir tmp("pl-sock");
  const auto path = tmp.path() / "m.sock";
  const int listener = ::socket(AF_UNIX, SOCK_STREAM, 0);
  REQUIRE(listener >= 0);
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  std::strncpy(addr.sun_path, path.c_str(), sizeof addr.sun_path - 1);
  REQUIRE(::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  REQUIRE(::listen(listener, 1) == 0);
  std::thread server(serve_one, listener);

  {
    auto client = std::make_shared<LineSocketClient>(path);
    HashingTokenizer tok;
    FileDiff f;
    f.path = "a.py";
    f.language = Language::Python;
    f.patch_text = "@@ +x = escape(y)\n";
    const auto chunk = encode_file_chunk("fix xss", f, tok);
    const auto req = chunk_request("vfc", chunk);
    CHECK(req.at("input_ids").size() == chunk.size());
    CHECK(req.at("token_type_ids").size() == chunk.size());

    SocketVfcProvider vfc(client);
    CHECK(vfc.score(chunk) == 0.75);
    SocketTypeProvider type(client);
    const auto d = type.score(chunk);
    CHECK(d[OwaspClass::A03] == 1.0);
    CHECK(d[OwaspClass::A06] == 0.0);
    SocketEmbeddingProvider emb(client, 3);
    CHECK(emb.embed("abcd") == std::vector<double>{4.0, 0.0, 1.0});
    CHECK(emb.dim() == 3);
  }
  server.join();
  ::close(listener);

  LineSocketClient dead(tmp.path() / "absent.sock");
  CHECK_THROWS(dead.call(json{{"kind", "vfc"}}));
}
