#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cir/error.hpp"
#include "cir/trainer.hpp"
#include "json.hpp"

namespace cir {
namespace {

using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little);

constexpr char kMagic[4] = {'C', 'I', 'R', 'K'};
constexpr std::size_t kPreamble = 12;  // magic, version, 3 reserved, u32 len

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i]))
         << (8 * i);
  }
  return v;
}

std::size_t expected_floats(const ModelDims& d) {
  std::size_t n = 0;
  for (const Tensor* t : zero_tensors(d).tensors()) n += t->size();
  return n;
}

}  // namespace

void save_checkpoint(const ParamSet& p, const std::filesystem::path& path,
                     const CheckpointMeta& meta) {
  validate(p);
  ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["vocab_size"] = p.dims.vocab_size;
  header["token_dim"] = p.dims.token_dim;
  header["image_dim"] = p.dims.image_dim;
  header["embed_dim"] = p.dims.embed_dim;
  header["hidden_dim"] = p.dims.hidden_dim;
  header["tau"] = p.tau;
  header["seed"] = meta.seed;
  header["stage"] = meta.stage;
  header["dtype"] = "f32le";
  auto names = ordered_json::array();
  for (auto n : ParamTensors::names()) names.push_back(std::string(n));
  header["tensors"] = names;
  const std::string hdr = header.dump();

  std::string buf(kMagic, 4);
  buf.push_back(static_cast<char>(kCheckpointVersion));
  buf.append(3, '\0');
  put_u32(buf, static_cast<std::uint32_t>(hdr.size()));
  buf += hdr;
  for (const Tensor* t : p.w.tensors()) {
    for (double v : t->data) {
      const float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      buf.append(b, 4);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path,
                         CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (buf.size() < kPreamble) {
    throw Error(ErrorCode::kTruncated, where + "file shorter than preamble");
  }
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kParse, where + "not a checkpoint (bad magic)");
  }
  const auto version = static_cast<std::uint8_t>(buf[4]);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                where + "format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::uint32_t hlen = get_u32(buf, 8);
  if (buf.size() - kPreamble < hlen) {
    throw Error(ErrorCode::kTruncated, where + "header cut short");
  }

  ordered_json header;
  try {
    header = ordered_json::parse(buf.substr(kPreamble, hlen));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParse, where + "bad header: " + e.what());
  }

  ParamSet p;
  CheckpointMeta m;
  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::kVersionMismatch,
                  where + "header format_version disagrees with preamble");
    }
    if (header.at("dtype").get<std::string>() != "f32le") {
      throw Error(ErrorCode::kUnsupportedDtype, where + "dtype must be f32le");
    }
    p.dims.vocab_size = header.at("vocab_size").get<std::uint32_t>();
    p.dims.token_dim = header.at("token_dim").get<std::size_t>();
    p.dims.image_dim = header.at("image_dim").get<std::size_t>();
    p.dims.embed_dim = header.at("embed_dim").get<std::size_t>();
    p.dims.hidden_dim = header.at("hidden_dim").get<std::size_t>();
    p.tau = header.at("tau").get<double>();
    m.seed = header.at("seed").get<std::uint64_t>();
    m.stage = header.at("stage").get<int>();
    const auto& names = header.at("tensors");
    const auto& want = ParamTensors::names();
    if (names.size() != want.size()) {
      throw Error(ErrorCode::kDimensionMismatch, where + "tensor list differs");
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (names[i].get<std::string>() != want[i]) {
        throw Error(ErrorCode::kDimensionMismatch,
                    where + "unexpected tensor '" +
                        names[i].get<std::string>() + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, where + "bad header: " + e.what());
  }
  if (p.dims.vocab_size < 2 || p.dims.token_dim == 0 ||
      p.dims.image_dim == 0 || p.dims.embed_dim == 0 ||
      p.dims.hidden_dim == 0) {
    throw Error(ErrorCode::kParse, where + "header dims must be positive");
  }

  const std::size_t payload = buf.size() - kPreamble - hlen;
  const std::size_t need = expected_floats(p.dims) * 4;
  if (payload < need) {
    throw Error(ErrorCode::kTruncated,
                where + std::to_string(payload) + " payload bytes, header dims need " +
                    std::to_string(need));
  }
  if (payload > need) {
    throw Error(ErrorCode::kDimensionMismatch,
                where + std::to_string(payload - need) +
                    " bytes beyond what header dims describe");
  }

  p.w = zero_tensors(p.dims);
  std::size_t at = kPreamble + hlen;
  for (Tensor* t : p.w.tensors()) {
    for (double& v : t->data) {
      float f;
      std::memcpy(&f, buf.data() + at, 4);
      at += 4;
      v = static_cast<double>(f);
    }
  }
  try {
    validate(p);
  } catch (const Error& e) {
    throw Error(ErrorCode::kNonFinite, where + e.what());
  }
  if (meta) *meta = m;
  return p;
}

}  // namespace cir
