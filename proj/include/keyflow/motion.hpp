#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "keyflow/skeleton.hpp"

namespace keyflow {

using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using KeyframeMask = std::vector<bool>;

enum Bio : int { kO = 0, kI = 1, kB = 2 };

// T x 246 pose frames, stored in single precision to match the .sprk payload.
struct MotionSequence {
  FrameMatrix frames;
  float fps = 25.0f;

  int length() const { return static_cast<int>(frames.rows()); }
  PoseFrame pose(int f) const;
  void set_pose(int f, const PoseFrame& pose);

  static MotionSequence zeros(int length, float fps = 25.0f);
};

// Throws BadLength / DegenerateRotation when the sequence is not a valid pose stream.
void validate_sequence(const MotionSequence& seq);

struct LabelSidecar {
  std::vector<int> bio;
  KeyframeMask mask;
  std::vector<int> gloss_tokens;
  int lang_token = 0;
  // Set when a loaded sidecar had no "lang" field and the default 0 was used.
  bool lang_defaulted = false;
};

bool operator==(const LabelSidecar& a, const LabelSidecar& b);

// .sprk: "SPRK", u16 version=1, u16 reserved=0, u32 T, u32 D=246, f32 fps, T*D f32 row-major.
// All little-endian.
std::string encode_sprk(const MotionSequence& seq);
MotionSequence decode_sprk(std::string_view bytes);
void save_sprk(const MotionSequence& seq, const std::filesystem::path& path);
MotionSequence load_sprk(const std::filesystem::path& path);

// {"v":1,"bio":[...],"mask":[...],"gloss":[...],"lang":int}
nlohmann::json sidecar_to_json(const LabelSidecar& side);
LabelSidecar sidecar_from_json(const nlohmann::json& doc);
void save_sidecar(const LabelSidecar& side, const std::filesystem::path& path);
LabelSidecar load_sidecar(const std::filesystem::path& path);

// Pairing check: label streams must match the sequence length.
void validate_pair(const MotionSequence& seq, const LabelSidecar& side);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace keyflow
