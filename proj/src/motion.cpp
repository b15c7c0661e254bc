#include "keyflow/motion.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "keyflow/error.hpp"
#include "keyflow/le_bytes.hpp"

namespace keyflow {

namespace {
constexpr char kSprkMagic[4] = {'S', 'P', 'R', 'K'};
constexpr std::uint16_t kSprkVersion = 1;
constexpr std::size_t kSprkHeader = 4 + 2 + 2 + 4 + 4 + 4;
}  // namespace

PoseFrame MotionSequence::pose(int f) const {
  return unflatten(std::span<const float>(frames.row(f).data(), kPoseDim));
}

void MotionSequence::set_pose(int f, const PoseFrame& pose) {
  const auto v = flatten(pose);
  for (int k = 0; k < kPoseDim; ++k) frames(f, k) = static_cast<float>(v[k]);
}

MotionSequence MotionSequence::zeros(int length, float fps) {
  MotionSequence s;
  s.frames = FrameMatrix::Zero(length, kPoseDim);
  s.fps = fps;
  return s;
}

void validate_sequence(const MotionSequence& seq) {
  if (seq.length() < 1) fail(ErrorCode::kBadLength, "sequence has no frames");
  if (seq.frames.cols() != kPoseDim) {
    fail(ErrorCode::kBadLength, "frame width must be 246, got " + std::to_string(seq.frames.cols()));
  }
  for (int f = 0; f < seq.length(); ++f) {
    const PoseFrame p = seq.pose(f);
    for (int j = 0; j < kNumJoints; ++j) rot6d_to_matrix(p.joint(j));
  }
}

bool operator==(const LabelSidecar& a, const LabelSidecar& b) {
  return a.bio == b.bio && a.mask == b.mask && a.gloss_tokens == b.gloss_tokens && a.lang_token == b.lang_token;
}

std::string encode_sprk(const MotionSequence& seq) {
  if (seq.frames.cols() != kPoseDim) fail(ErrorCode::kBadLength, "frame width must be 246");
  std::string out;
  out.reserve(kSprkHeader + 4 * seq.frames.size());
  out.append(kSprkMagic, 4);
  le::put_u16(out, kSprkVersion);
  le::put_u16(out, 0);
  le::put_u32(out, static_cast<std::uint32_t>(seq.length()));
  le::put_u32(out, kPoseDim);
  le::put_f32(out, seq.fps);
  const float* data = seq.frames.data();
  for (Eigen::Index i = 0; i < seq.frames.size(); ++i) le::put_f32(out, data[i]);
  return out;
}

MotionSequence decode_sprk(std::string_view bytes) {
  if (bytes.size() < kSprkHeader) fail(ErrorCode::kFormatError, "truncated header");
  if (std::memcmp(bytes.data(), kSprkMagic, 4) != 0) fail(ErrorCode::kFormatError, "bad magic");
  le::Reader r(bytes.substr(4));
  const auto version = r.u16();
  if (version != kSprkVersion) fail(ErrorCode::kFormatError, "unsupported version " + std::to_string(version));
  if (r.u16() != 0) fail(ErrorCode::kFormatError, "reserved field must be zero");
  const std::uint32_t t = r.u32();
  const std::uint32_t d = r.u32();
  if (d != kPoseDim) fail(ErrorCode::kFormatError, "bad dimension " + std::to_string(d));
  if (t == 0) fail(ErrorCode::kFormatError, "empty sequence");
  MotionSequence seq;
  seq.fps = r.f32();
  const std::uint64_t payload = static_cast<std::uint64_t>(t) * d * 4;
  if (bytes.size() - kSprkHeader != payload) {
    fail(ErrorCode::kFormatError, "bad length: expected " + std::to_string(payload) + " payload bytes, got " +
                                      std::to_string(bytes.size() - kSprkHeader));
  }
  seq.frames.resize(t, d);
  float* data = seq.frames.data();
  for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(t) * d; ++i) data[i] = r.f32();
  return seq;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoError, "write failed for " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchemaError, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) { write_file(path, doc.dump(1) + "\n"); }

void save_sprk(const MotionSequence& seq, const std::filesystem::path& path) { write_file(path, encode_sprk(seq)); }

MotionSequence load_sprk(const std::filesystem::path& path) { return decode_sprk(read_file(path)); }

nlohmann::json sidecar_to_json(const LabelSidecar& side) {
  nlohmann::json mask = nlohmann::json::array();
  for (bool m : side.mask) mask.push_back(m);
  return {{"v", 1}, {"bio", side.bio}, {"mask", mask}, {"gloss", side.gloss_tokens}, {"lang", side.lang_token}};
}

LabelSidecar sidecar_from_json(const nlohmann::json& doc) {
  LabelSidecar side;
  try {
    if (!doc.is_object()) fail(ErrorCode::kSchemaError, "sidecar must be a JSON object");
    if (doc.contains("v") && doc.at("v").get<int>() != 1) fail(ErrorCode::kSchemaError, "unsupported sidecar version");
    side.bio = doc.at("bio").get<std::vector<int>>();
    for (const auto& m : doc.at("mask")) side.mask.push_back(m.is_boolean() ? m.get<bool>() : m.get<int>() != 0);
    side.gloss_tokens = doc.value("gloss", std::vector<int>{});
    if (doc.contains("lang")) {
      side.lang_token = doc.at("lang").get<int>();
    } else {
      side.lang_token = 0;
      side.lang_defaulted = true;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchemaError, e.what());
  }
  for (int b : side.bio) {
    if (b < kO || b > kB) fail(ErrorCode::kSchemaError, "bio label out of range: " + std::to_string(b));
  }
  if (side.mask.size() != side.bio.size()) fail(ErrorCode::kSchemaError, "mask and bio lengths differ");
  return side;
}

void save_sidecar(const LabelSidecar& side, const std::filesystem::path& path) {
  write_file(path, sidecar_to_json(side).dump() + "\n");
}

LabelSidecar load_sidecar(const std::filesystem::path& path) { return sidecar_from_json(read_json(path)); }

void validate_pair(const MotionSequence& seq, const LabelSidecar& side) {
  const auto t = static_cast<std::size_t>(seq.length());
  if (side.bio.size() != t || side.mask.size() != t) {
    fail(ErrorCode::kLengthMismatch, "labels cover " + std::to_string(side.bio.size()) + " frames, sequence has " +
                                         std::to_string(t));
  }
}

}  // namespace keyflow
