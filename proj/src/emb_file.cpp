#include "cachexia/emb_file.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "cachexia/csv.hpp"
#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"

namespace cachexia {
namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(Errc::MalformedLine, "truncated EMB1 file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_emb1(const EmbeddingFile& file, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(file.records.size()));
  put_u32(out, file.dimension);
  for (const auto& r : file.records) {
    if (r.values.size() != file.dimension)
      throw Error(Errc::DimensionMismatch, fmt::format("record has {} values, file dimension {}", r.values.size(), file.dimension));
    out.write(reinterpret_cast<const char*>(r.key.data()), 16);
    for (float f : r.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

EmbeddingFile read_emb1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw Error(Errc::MalformedLine, path.string() + " is not an EMB1 file");
  EmbeddingFile f;
  std::uint32_t count = get_u32(in);
  f.dimension = get_u32(in);
  f.records.resize(count);
  for (auto& r : f.records) {
    if (!in.read(reinterpret_cast<char*>(r.key.data()), 16)) throw Error(Errc::MalformedLine, "truncated EMB1 record");
    r.values.resize(f.dimension);
    for (auto& v : r.values) v = std::bit_cast<float>(get_u32(in));
  }
  return f;
}

EmbeddingFile read_embedding_csv(const std::filesystem::path& path) {
  auto t = csv::read_file(path.string());
  EmbeddingFile f;
  auto consume = [&](const csv::Row& row) {
    if (row.size() < 2) throw Error(Errc::MalformedLine, "embedding row needs an id and values");
    if (f.dimension == 0) f.dimension = static_cast<std::uint32_t>(row.size() - 1);
    if (row.size() - 1 != f.dimension) throw Error(Errc::DimensionMismatch, "ragged embedding CSV row for " + row[0]);
    EmbeddingRecord r;
    r.key = id_hash16(row[0]);
    for (std::size_t i = 1; i < row.size(); ++i) r.values.push_back(std::stof(row[i]));
    f.records.push_back(std::move(r));
  };
  // A header is recognised by a non-numeric second field.
  if (!t.header.empty()) {
    bool is_header = t.header.size() > 1 && !t.header[1].empty() &&
                     t.header[1].find_first_not_of("0123456789.-+eE") != std::string::npos;
    if (!is_header) consume(t.header);
  }
  for (const auto& row : t.rows) consume(row);
  return f;
}

void write_embedding_csv(const std::vector<std::string>& ids, const std::vector<Embedding>& vectors,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    csv::Row row{ids[i]};
    for (double v : vectors[i]) row.push_back(csv::format_number(static_cast<float>(v)));
    csv::write_row(out, row);
  }
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0) return read_emb1(path);
  return read_embedding_csv(path);
}

EmbeddingStore::EmbeddingStore(EmbeddingFile file) : dimension_(file.dimension) {
  for (auto& r : file.records) index_[r.key] = Embedding(r.values.begin(), r.values.end());
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) { return EmbeddingStore(read_embedding_file(path)); }

std::optional<Embedding> EmbeddingStore::lookup(std::string_view id) const { return lookup(id_hash16(id)); }

std::optional<Embedding> EmbeddingStore::lookup(const IdHash& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

}  // namespace cachexia
