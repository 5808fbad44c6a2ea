#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "patchlink/similarity.hpp"
#include "patchlink/type_scorer.hpp"
#include "patchlink/vfc_scorer.hpp"

namespace patchlink {

// Newline-delimited JSON over a Unix domain socket: one request object per
// line, one response object per line, in order. Lets an external model
// process stand in for any reference provider.
//
//   vfc:   {"kind":"vfc","input_ids":[..],"attention_mask":[..],"token_type_ids":[..]}
//          -> {"probability": p}
//   type:  {"kind":"type", same fields}  -> {"probabilities": [10 values, trained-class order]}
//   embed: {"kind":"embed","text": "..."} -> {"embedding": [dim values]}
class LineSocketClient {
 public:
  explicit LineSocketClient(std::filesystem::path socket_path);
  ~LineSocketClient();
  LineSocketClient(const LineSocketClient&) = delete;
  LineSocketClient& operator=(const LineSocketClient&) = delete;

  nlohmann::json call(const nlohmann::json& request);

 private:
  void connect_locked();

  std::filesystem::path path_;
  std::mutex mu_;
  int fd_ = -1;
  std::string buffer_;
};

nlohmann::json chunk_request(const char* kind, const ChunkEncoding& chunk);

class SocketVfcProvider final : public VfcScoreProvider {
 public:
  explicit SocketVfcProvider(std::shared_ptr<LineSocketClient> client) : client_(std::move(client)) {}
  double score(const ChunkEncoding& chunk) const override;

 private:
  std::shared_ptr<LineSocketClient> client_;
};

class SocketTypeProvider final : public TypeScoreProvider {
 public:
  explicit SocketTypeProvider(std::shared_ptr<LineSocketClient> client) : client_(std::move(client)) {}
  TypeDistribution score(const ChunkEncoding& chunk) const override;

 private:
  std::shared_ptr<LineSocketClient> client_;
};

class SocketEmbeddingProvider final : public EmbeddingProvider {
 public:
  SocketEmbeddingProvider(std::shared_ptr<LineSocketClient> client, std::size_t dim)
      : client_(std::move(client)), dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::shared_ptr<LineSocketClient> client_;
  std::size_t dim_;
};

}  // namespace patchlink
