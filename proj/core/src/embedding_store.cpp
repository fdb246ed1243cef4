#include "cir/embedding_store.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cir/error.hpp"
#include "cir/hash.hpp"
#include "json.hpp"

namespace cir {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "the f32le format is read and written natively");

constexpr const char* kValuesFile = "embeddings.f32";
constexpr const char* kIdsFile = "ids.txt";
constexpr const char* kManifestFile = "manifest.json";

std::vector<std::byte> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  if (!raw.empty()) std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t dims, std::vector<std::string> ids,
                                 std::vector<float> values)
    : dims_(dims), ids_(std::move(ids)), values_(std::move(values)) {
  if (dims_ == 0) {
    throw Error(ErrorCode::kInvalidArgument, "embedding dims must be positive");
  }
  if (values_.size() != ids_.size() * dims_) {
    throw Error(ErrorCode::kCountMismatch,
                "values length " + std::to_string(values_.size()) +
                    " != count * dims = " +
                    std::to_string(ids_.size() * dims_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error(ErrorCode::kNonFinite,
                  "non-finite value in row of id '" + ids_[i / dims_] + "'");
    }
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate id '" + ids_[i] + "'");
    }
  }
}

std::span<const float> EmbeddingMatrix::row(std::size_t i) const {
  return std::span<const float>(values_).subspan(i * dims_, dims_);
}

std::size_t EmbeddingMatrix::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) {
    throw Error(ErrorCode::kUnknownId, "unknown id '" + std::string(id) + "'");
  }
  return it->second;
}

bool EmbeddingMatrix::contains(std::string_view id) const {
  return index_.contains(std::string(id));
}

std::string checksum_bytes(std::span<const std::byte> bytes) {
  return std::string(kChecksumAlgorithm) + ":" + hex64(fnv1a64(bytes));
}

Manifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw Error(ErrorCode::kMissingFile,
                "cannot open manifest " + manifest_path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, "manifest " + manifest_path.string() +
                                       ": " + e.what());
  }
  Manifest m;
  try {
    m.dims = j.at("dims").get<std::size_t>();
    m.count = j.at("count").get<std::size_t>();
    m.dtype = j.at("dtype").get<std::string>();
    m.values_file = j.at("values_file").get<std::string>();
    m.ids_file = j.at("ids_file").get<std::string>();
    m.checksum = j.at("checksum").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, "manifest " + manifest_path.string() +
                                       ": " + e.what());
  }
  if (m.dtype != kEmbeddingDtype) {
    throw Error(ErrorCode::kUnsupportedDtype,
                "unsupported dtype '" + m.dtype + "'");
  }
  return m;
}

EmbeddingMatrix load_embeddings(const fs::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();

  const auto bytes = read_file_bytes(base / m.values_file);
  if (checksum_bytes(bytes) != m.checksum) {
    throw Error(ErrorCode::kChecksumMismatch,
                "checksum mismatch for " + (base / m.values_file).string());
  }
  if (bytes.size() != m.count * m.dims * sizeof(float)) {
    throw Error(ErrorCode::kCountMismatch,
                "values file holds " + std::to_string(bytes.size()) +
                    " bytes, manifest implies " +
                    std::to_string(m.count * m.dims * sizeof(float)));
  }

  std::ifstream ids_in(base / m.ids_file);
  if (!ids_in) {
    throw Error(ErrorCode::kMissingFile,
                "cannot open ids file " + (base / m.ids_file).string());
  }
  std::vector<std::string> ids;
  for (std::string line; std::getline(ids_in, line);) ids.push_back(line);
  if (ids.size() != m.count) {
    throw Error(ErrorCode::kCountMismatch,
                "ids file has " + std::to_string(ids.size()) +
                    " lines, manifest count is " + std::to_string(m.count));
  }

  std::vector<float> values(m.count * m.dims);
  if (!values.empty()) std::memcpy(values.data(), bytes.data(), bytes.size());
  return EmbeddingMatrix(m.dims, std::move(ids), std::move(values));
}

Manifest save_embeddings(const EmbeddingMatrix& matrix, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " +
                                    ec.message());
  }

  const auto values = matrix.values();
  const auto* raw = reinterpret_cast<const std::byte*>(values.data());
  const std::span<const std::byte> bytes(raw, values.size_bytes());

  Manifest m;
  m.dims = matrix.dims();
  m.count = matrix.count();
  m.values_file = kValuesFile;
  m.ids_file = kIdsFile;
  m.checksum = checksum_bytes(bytes);

  {
    std::ofstream out(dir / kValuesFile, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + dir.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "short write in " + dir.string());
  }
  {
    std::ofstream out(dir / kIdsFile, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + dir.string());
    for (const auto& id : matrix.ids()) out << id << '\n';
  }
  {
    json j;
    j["dims"] = m.dims;
    j["count"] = m.count;
    j["dtype"] = m.dtype;
    j["values_file"] = m.values_file;
    j["ids_file"] = m.ids_file;
    j["checksum"] = m.checksum;
    std::ofstream out(dir / kManifestFile, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + dir.string());
    out << j.dump(2) << '\n';
  }
  return m;
}

std::vector<double> l2_normalize(std::span<const double> v) {
  if (v.empty()) {
    throw Error(ErrorCode::kDegenerateInput, "cannot normalize empty vector");
  }
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::kDegenerateInput,
                "cannot normalize zero or non-finite vector");
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

std::vector<double> l2_normalize(std::span<const float> v) {
  std::vector<double> d(v.begin(), v.end());
  return l2_normalize(std::span<const double>(d));
}

std::span<const float> lookup(const EmbeddingMatrix& matrix,
                              std::string_view id) {
  return matrix.row(matrix.index_of(id));
}

double cosine_similarity(std::span<const double> a,
                         std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "cosine of unequal lengths");
  }
  const auto na = l2_normalize(a);
  const auto nb = l2_normalize(b);
  double dot = 0.0;
  for (std::size_t i = 0; i < na.size(); ++i) dot += na[i] * nb[i];
  return dot;
}

}  // namespace cir
