#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cachexia {

using Embedding = std::vector<double>;
using TokenChunk = std::vector<std::string>;

enum class EmbeddingKind { text, image };

/// Source of fixed-dimension embeddings. embed_* output length equals dimension() and is
/// deterministic for a fixed input. Implementations must be safe for concurrent calls.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual EmbeddingKind kind() const = 0;
  /// Model context size in tokens.
  virtual std::size_t token_limit() const { return 512; }

  /// Whitespace tokenization unless the provider supplies its own.
  virtual std::vector<std::string> tokenize(std::string_view text) const;
  virtual Embedding embed_tokens(std::span<const std::string> chunk) const;
  virtual Embedding embed_slice(std::string_view slice_ref) const;
};

std::vector<std::string> whitespace_tokenize(std::string_view text);

/// Deterministic text embedder with no model weights. A word token maps to a seeded hash
/// vector in [-1, 1]^dim. A numeric token is bound to the token before it: it contributes
/// sign(v)*log1p(|v|) times that token's hash vector, so "smi: 41.5" stays linearly decodable.
/// The chunk embedding is the mean over its tokens.
class HashingTextProvider final : public EmbeddingProvider {
 public:
  explicit HashingTextProvider(std::size_t dimension = 64, std::uint64_t seed = 0, std::size_t token_limit = 512);

  std::string name() const override { return "stub-text"; }
  std::size_t dimension() const override { return dim_; }
  EmbeddingKind kind() const override { return EmbeddingKind::text; }
  std::size_t token_limit() const override { return limit_; }
  Embedding embed_tokens(std::span<const std::string> chunk) const override;

  /// The per-token hash vector.
  Embedding token_vector(std::string_view token) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::size_t limit_;
};

/// Deterministic image stub: each slice reference maps to a seeded hash vector.
class HashingImageProvider final : public EmbeddingProvider {
 public:
  explicit HashingImageProvider(std::size_t dimension = 32, std::uint64_t seed = 0);

  std::string name() const override { return "stub-image"; }
  std::size_t dimension() const override { return dim_; }
  EmbeddingKind kind() const override { return EmbeddingKind::image; }
  Embedding embed_slice(std::string_view slice_ref) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

class EmbeddingStore;

/// Image provider backed by precomputed per-slice vectors.
class StoredImageProvider final : public EmbeddingProvider {
 public:
  explicit StoredImageProvider(std::shared_ptr<const EmbeddingStore> store);

  std::string name() const override { return "file-image"; }
  std::size_t dimension() const override;
  EmbeddingKind kind() const override { return EmbeddingKind::image; }
  Embedding embed_slice(std::string_view slice_ref) const override;

 private:
  std::shared_ptr<const EmbeddingStore> store_;
};

struct HttpEmbeddingConfig {
  std::string base_url = "http://127.0.0.1:11434";
  std::string path = "/api/embed";
  std::string model;
  std::size_t dimension = 0;
  std::size_t token_limit = 512;
  double timeout_s = 60.0;
};

/// Text provider calling an embedding endpoint: POST {model, input} and reads
/// `embeddings[0]`, `embedding`, or `data[0].embedding`.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(HttpEmbeddingConfig cfg);

  std::string name() const override { return "http:" + cfg_.model; }
  std::size_t dimension() const override { return cfg_.dimension; }
  EmbeddingKind kind() const override { return EmbeddingKind::text; }
  std::size_t token_limit() const override { return cfg_.token_limit; }
  Embedding embed_tokens(std::span<const std::string> chunk) const override;

 private:
  HttpEmbeddingConfig cfg_;
};

/// Greedy contiguous segmentation into chunks of at most `limit` tokens. Throws EmptyText.
std::vector<TokenChunk> chunk_tokens(std::string_view text, std::size_t limit, const EmbeddingProvider& provider);

/// Element-wise mean. Throws EmptyList or DimensionMismatch.
Embedding pool_mean(std::span<const Embedding> vectors);

/// Chunk to the provider's token limit, embed each chunk, mean-pool.
Embedding embed_text(std::string_view text, const EmbeddingProvider& provider);

/// Mean of per-slice embeddings. Throws EmptyList.
Embedding embed_image_series(std::span<const std::string> slice_refs, const EmbeddingProvider& provider);

enum class EmbeddingSource { tabular_text, notes_text, image };
inline constexpr std::array<EmbeddingSource, 3> kFusionOrder = {EmbeddingSource::tabular_text,
                                                                 EmbeddingSource::notes_text, EmbeddingSource::image};
std::string_view to_string(EmbeddingSource s);

struct FusionPart {
  EmbeddingSource source;
  Embedding vector;
  bool present = false;
};

struct FusedEmbedding {
  std::string patient_id;
  std::vector<FusionPart> parts;
  Embedding fused;
};

/// Declared width per source in fusion order; 0 disables the source.
using FusionDims = std::array<std::size_t, 3>;
using FusionInputs = std::array<std::optional<Embedding>, 3>;

/// Concatenates enabled sources in fixed order; an absent source contributes zeros.
/// One presence flag (1/0) per enabled source is appended after the vectors.
FusedEmbedding fuse_concat(std::string patient_id, const FusionInputs& parts, const FusionDims& dims);

std::size_t fused_width(const FusionDims& dims);

}  // namespace cachexia
