#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cachexia/embedding.hpp"

namespace cachexia {

using IdHash = std::array<std::uint8_t, 16>;

struct EmbeddingRecord {
  IdHash key{};
  std::vector<float> values;
};

/// Layout: "EMB1", u32 count, u32 dimension, then per record a 16-byte id hash followed by
/// `dimension` float32 values. All integers and floats little-endian.
struct EmbeddingFile {
  std::uint32_t dimension = 0;
  std::vector<EmbeddingRecord> records;
};

void write_emb1(const EmbeddingFile& file, const std::filesystem::path& path);
EmbeddingFile read_emb1(const std::filesystem::path& path);

/// CSV variant: `id,v0,...,vD-1`; ids are hashed on load.
EmbeddingFile read_embedding_csv(const std::filesystem::path& path);
void write_embedding_csv(const std::vector<std::string>& ids, const std::vector<Embedding>& vectors,
                         const std::filesystem::path& path);

/// Reads either format, detected by the magic bytes.
EmbeddingFile read_embedding_file(const std::filesystem::path& path);

/// Lookup of precomputed vectors by id.
class EmbeddingStore {
 public:
  explicit EmbeddingStore(EmbeddingFile file);
  static EmbeddingStore load(const std::filesystem::path& path);

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return index_.size(); }
  std::optional<Embedding> lookup(std::string_view id) const;
  std::optional<Embedding> lookup(const IdHash& key) const;

 private:
  std::size_t dimension_;
  std::map<IdHash, Embedding> index_;
};

}  // namespace cachexia
