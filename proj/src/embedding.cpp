#include "cachexia/embedding.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <charconv>
#include <cmath>
#include <json.hpp>

#include "cachexia/emb_file.hpp"
#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"

namespace cachexia {

using json = nlohmann::json;

namespace {

Embedding hash_vector(std::string_view key, std::uint64_t seed, std::size_t dim) {
  Embedding v(dim);
  const std::uint64_t base = fnv1a64(key) ^ splitmix64(seed);
  for (std::size_t d = 0; d < dim; ++d) {
    std::uint64_t x = splitmix64(base + d * 0x9e3779b97f4a7c15ULL);
    v[d] = static_cast<double>(x >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  }
  return v;
}

std::optional<double> parse_number(std::string_view tok) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

std::vector<std::string> whitespace_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> EmbeddingProvider::tokenize(std::string_view text) const { return whitespace_tokenize(text); }

Embedding EmbeddingProvider::embed_tokens(std::span<const std::string>) const {
  throw Error(Errc::InvalidConfig, name() + " is not a text provider");
}

Embedding EmbeddingProvider::embed_slice(std::string_view) const {
  throw Error(Errc::InvalidConfig, name() + " is not an image provider");
}

HashingTextProvider::HashingTextProvider(std::size_t dimension, std::uint64_t seed, std::size_t token_limit)
    : dim_(dimension), seed_(seed), limit_(token_limit) {
  if (dim_ == 0 || limit_ == 0) throw Error(Errc::InvalidConfig, "stub text provider needs dim > 0 and limit > 0");
}

Embedding HashingTextProvider::token_vector(std::string_view token) const { return hash_vector(token, seed_, dim_); }

Embedding HashingTextProvider::embed_tokens(std::span<const std::string> chunk) const {
  Embedding acc(dim_, 0.0);
  if (chunk.empty()) return acc;
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    auto num = parse_number(chunk[i]);
    if (num && i > 0) {
      double g = std::copysign(std::log1p(std::abs(*num)), *num);
      auto key = token_vector(chunk[i - 1]);
      for (std::size_t d = 0; d < dim_; ++d) acc[d] += g * key[d];
    } else {
      auto u = token_vector(chunk[i]);
      for (std::size_t d = 0; d < dim_; ++d) acc[d] += u[d];
    }
  }
  const double n = static_cast<double>(chunk.size());
  for (auto& a : acc) a /= n;
  return acc;
}

HashingImageProvider::HashingImageProvider(std::size_t dimension, std::uint64_t seed) : dim_(dimension), seed_(seed) {
  if (dim_ == 0) throw Error(Errc::InvalidConfig, "stub image provider needs dim > 0");
}

Embedding HashingImageProvider::embed_slice(std::string_view slice_ref) const {
  return hash_vector(slice_ref, seed_ ^ 0x5eedULL, dim_);
}

StoredImageProvider::StoredImageProvider(std::shared_ptr<const EmbeddingStore> store) : store_(std::move(store)) {}

std::size_t StoredImageProvider::dimension() const { return store_->dimension(); }

Embedding StoredImageProvider::embed_slice(std::string_view slice_ref) const {
  auto v = store_->lookup(slice_ref);
  if (!v) throw Error(Errc::EmptyList, fmt::format("no precomputed embedding for slice '{}'", slice_ref));
  return *v;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpEmbeddingConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.dimension == 0) throw Error(Errc::InvalidConfig, "http embedding provider needs a declared dimension");
}

Embedding HttpEmbeddingProvider::embed_tokens(std::span<const std::string> chunk) const {
  std::string input;
  for (const auto& t : chunk) {
    if (!input.empty()) input.push_back(' ');
    input += t;
  }
  httplib::Client cli(cfg_.base_url);
  auto secs = static_cast<time_t>(cfg_.timeout_s);
  cli.set_connection_timeout(secs);
  cli.set_read_timeout(secs);
  json body{{"model", cfg_.model}, {"input", input}};
  auto res = cli.Post(cfg_.path, body.dump(), "application/json");
  if (!res) {
    if (res.error() == httplib::Error::Read || res.error() == httplib::Error::ConnectionTimeout)
      throw Error(Errc::Timeout, cfg_.base_url + " embedding request timed out");
    throw Error(Errc::EndpointUnreachable, cfg_.base_url + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) throw Error(Errc::EndpointUnreachable, fmt::format("{} returned HTTP {}", cfg_.base_url, res->status));
  json j = json::parse(res->body);
  Embedding v;
  if (j.contains("embeddings")) v = j.at("embeddings").at(0).get<Embedding>();
  else if (j.contains("embedding")) v = j.at("embedding").get<Embedding>();
  else if (j.contains("data")) v = j.at("data").at(0).at("embedding").get<Embedding>();
  else throw Error(Errc::EndpointUnreachable, "embedding response has no vector");
  if (v.size() != cfg_.dimension)
    throw Error(Errc::DimensionMismatch, fmt::format("endpoint returned {} values, declared {}", v.size(), cfg_.dimension));
  return v;
}

std::vector<TokenChunk> chunk_tokens(std::string_view text, std::size_t limit, const EmbeddingProvider& provider) {
  if (limit == 0) throw Error(Errc::InvalidConfig, "chunk limit must be positive");
  auto tokens = provider.tokenize(text);
  if (tokens.empty()) throw Error(Errc::EmptyText, "no tokens to embed");
  std::vector<TokenChunk> chunks;
  for (std::size_t i = 0; i < tokens.size(); i += limit) {
    auto end = std::min(tokens.size(), i + limit);
    chunks.emplace_back(std::make_move_iterator(tokens.begin() + static_cast<std::ptrdiff_t>(i)),
                        std::make_move_iterator(tokens.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  return chunks;
}

Embedding pool_mean(std::span<const Embedding> vectors) {
  if (vectors.empty()) throw Error(Errc::EmptyList, "nothing to pool");
  const std::size_t dim = vectors.front().size();
  Embedding out(dim, 0.0);
  for (const auto& v : vectors) {
    if (v.size() != dim) throw Error(Errc::DimensionMismatch, fmt::format("pooling {} with {} values", dim, v.size()));
    for (std::size_t d = 0; d < dim; ++d) out[d] += v[d];
  }
  const double n = static_cast<double>(vectors.size());
  for (auto& x : out) x /= n;
  return out;
}

Embedding embed_text(std::string_view text, const EmbeddingProvider& provider) {
  if (provider.kind() != EmbeddingKind::text) throw Error(Errc::InvalidConfig, provider.name() + " is not a text provider");
  auto chunks = chunk_tokens(text, provider.token_limit(), provider);
  std::vector<Embedding> vectors;
  vectors.reserve(chunks.size());
  for (const auto& c : chunks) {
    auto v = provider.embed_tokens(c);
    if (v.size() != provider.dimension())
      throw Error(Errc::DimensionMismatch, fmt::format("{} returned {} values, declared {}", provider.name(), v.size(),
                                                       provider.dimension()));
    vectors.push_back(std::move(v));
  }
  return pool_mean(vectors);
}

Embedding embed_image_series(std::span<const std::string> slice_refs, const EmbeddingProvider& provider) {
  if (provider.kind() != EmbeddingKind::image)
    throw Error(Errc::InvalidConfig, provider.name() + " is not an image provider");
  if (slice_refs.empty()) throw Error(Errc::EmptyList, "image series has no slices");
  std::vector<Embedding> vectors;
  for (const auto& s : slice_refs) vectors.push_back(provider.embed_slice(s));
  return pool_mean(vectors);
}

std::string_view to_string(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::tabular_text: return "tabular_text";
    case EmbeddingSource::notes_text: return "notes_text";
    case EmbeddingSource::image: return "image";
  }
  return "?";
}

std::size_t fused_width(const FusionDims& dims) {
  std::size_t w = 0;
  for (auto d : dims)
    if (d) w += d + 1;
  return w;
}

FusedEmbedding fuse_concat(std::string patient_id, const FusionInputs& parts, const FusionDims& dims) {
  FusedEmbedding out;
  out.patient_id = std::move(patient_id);
  out.fused.reserve(fused_width(dims));
  std::vector<double> flags;
  for (std::size_t s = 0; s < kFusionOrder.size(); ++s) {
    if (dims[s] == 0) {
      if (parts[s])
        throw Error(Errc::DimensionMismatch, fmt::format("{} supplied but disabled", to_string(kFusionOrder[s])));
      continue;
    }
    FusionPart part{kFusionOrder[s], {}, parts[s].has_value()};
    if (parts[s]) {
      if (parts[s]->size() != dims[s])
        throw Error(Errc::DimensionMismatch, fmt::format("{} has {} values, declared {}", to_string(kFusionOrder[s]),
                                                         parts[s]->size(), dims[s]));
      part.vector = *parts[s];
    } else {
      part.vector.assign(dims[s], 0.0);
    }
    out.fused.insert(out.fused.end(), part.vector.begin(), part.vector.end());
    flags.push_back(part.present ? 1.0 : 0.0);
    out.parts.push_back(std::move(part));
  }
  out.fused.insert(out.fused.end(), flags.begin(), flags.end());
  return out;
}

}  // namespace cachexia
