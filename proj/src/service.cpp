#include "keyflow/service.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "keyflow/error.hpp"
#include "keyflow/rotmath.hpp"

namespace keyflow::svc {

namespace {

constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

Response error_response(int status, std::string_view code, const std::string& detail) {
  return {status, {{"error", code}, {"detail", detail}}, std::nullopt};
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIoError:
      return 500;
    default:
      return 422;
  }
}

// Request bodies are validated by hand so every problem maps to 422 with a readable detail.
int required_int(const nlohmann::json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key) || !obj.at(key).is_number_integer()) {
    fail(ErrorCode::kSchemaError, std::string("'") + key + "' must be an integer");
  }
  return obj.at(key).get<int>();
}

std::vector<double> number_array(const nlohmann::json& obj, const char* key, std::size_t n) {
  const auto& a = obj.at(key);
  if (!a.is_array() || a.size() != n) {
    fail(ErrorCode::kSchemaError, std::string("'") + key + "' must hold " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  for (const auto& x : a) {
    if (!x.is_number()) fail(ErrorCode::kSchemaError, std::string("'") + key + "' must hold numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) | std::uint8_t(bytes[i + 2]);
    for (int k = 3; k >= 0; --k) out.push_back(kAlphabet[(v >> (6 * k)) & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = std::uint8_t(bytes[i]) << 16;
    if (rest == 2) v |= std::uint8_t(bytes[i + 1]) << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (std::size_t k = 0; k < kAlphabet.size(); ++k) lookup[static_cast<unsigned char>(kAlphabet[k])] = static_cast<int>(k);
  std::string clean;
  for (char ch : text) {
    if (ch != '\n' && ch != '\r' && ch != ' ') clean.push_back(ch);
  }
  if (clean.size() % 4 != 0) fail(ErrorCode::kFormatError, "base64 length is not a multiple of 4");
  std::string out;
  for (std::size_t i = 0; i < clean.size(); i += 4) {
    const bool last = i + 4 == clean.size();
    int pad = 0;
    std::uint32_t v = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char ch = clean[i + k];
      int d = 0;
      if (ch == '=') {
        if (!last || k < 2) fail(ErrorCode::kFormatError, "misplaced base64 padding");
        ++pad;
      } else {
        if (pad > 0) fail(ErrorCode::kFormatError, "misplaced base64 padding");
        d = lookup[static_cast<unsigned char>(ch)];
        if (d < 0) fail(ErrorCode::kFormatError, "invalid base64 character");
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

Service::Service(cfm::FlowModel model, cfm::FlowConfig cfg, std::vector<CorpusItem> corpus, ServiceOptions opts)
    : model_(std::move(model)),
      cfg_(cfg),
      corpus_(std::move(corpus)),
      opts_(opts),
      skel_(default_skeleton()) {
  cfg_.validate();
  if (opts_.max_sessions < 1) fail(ErrorCode::kConfigInvalid, "max_sessions must be positive");
}

Response Service::health() const { return {200, {{"ok", true}}, std::nullopt}; }

Response Service::skeleton() const { return {200, skeleton_to_json(skel_), std::nullopt}; }

std::size_t Service::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  lru_.splice(lru_.begin(), lru_, it->second.second);
  return it->second.first;
}

nlohmann::json Service::describe(const Session& s) const {
  std::vector<int> frames;
  for (std::size_t f = 0; f < s.mask.size(); ++f) {
    if (s.mask[f]) frames.push_back(static_cast<int>(f));
  }
  nlohmann::json mask = nlohmann::json::array();
  for (bool b : s.mask) mask.push_back(b ? 1 : 0);
  nlohmann::json out = {{"session_id", s.id},
                        {"T", s.seq.length()},
                        {"fps", s.seq.fps},
                        {"mask", mask},
                        {"anchor_frames", frames},
                        {"generations", s.history_order}};
  if (s.text) out["text"] = {{"gloss", s.text->gloss_tokens}, {"lang", s.text->lang_token}};
  return out;
}

Response Service::create_session(const nlohmann::json& body) {
  auto s = std::make_shared<Session>();
  try {
    if (!body.is_object()) fail(ErrorCode::kSchemaError, "request body must be a JSON object");
    std::optional<LabelSidecar> labels;
    if (body.contains("sprk")) {
      if (!body.at("sprk").is_string()) fail(ErrorCode::kSchemaError, "'sprk' must be a base64 string");
      s->seq = decode_sprk(base64_decode(body.at("sprk").get<std::string>()));
      if (body.contains("labels")) labels = sidecar_from_json(body.at("labels"));
    } else if (body.contains("item")) {
      const int item = required_int(body, "item");
      if (item < 0 || item >= static_cast<int>(corpus_.size())) {
        fail(ErrorCode::kParameterOutOfRange, "corpus item " + std::to_string(item) + " does not exist");
      }
      s->seq = corpus_[item].seq;
      labels = corpus_[item].labels;
    } else {
      fail(ErrorCode::kSchemaError, "expected 'sprk' or 'item'");
    }
    validate_sequence(s->seq);
    const int frames = s->seq.length();
    s->mask = KeyframeMask(frames, false);
    if (labels) {
      validate_pair(s->seq, *labels);
      s->mask = labels->mask;
      s->text = cfm::TextCondition{labels->gloss_tokens, labels->lang_token};
      cfm::text_rows(model_, s->text);  // range check against the model vocabulary
    }
    if (body.contains("mask")) {
      const auto& m = body.at("mask");
      if (!m.is_array() || static_cast<int>(m.size()) != frames) {
        fail(ErrorCode::kSchemaError, "'mask' must hold T entries");
      }
      for (int f = 0; f < frames; ++f) s->mask[f] = m[f].is_boolean() ? m[f].get<bool>() : m[f].get<int>() != 0;
    }
    s->anchors = cfm::to_mat(s->seq);
  } catch (const Error& e) {
    return error_response(422, to_string(e.code()), e.detail());
  } catch (const nlohmann::json::exception& e) {
    return error_response(422, "SchemaError", e.what());
  }

  std::lock_guard lock(mu_);
  s->id = "s" + std::to_string(next_session_++);
  while (sessions_.size() >= opts_.max_sessions) {
    sessions_.erase(lru_.back());
    lru_.pop_back();
  }
  lru_.push_front(s->id);
  sessions_.emplace(s->id, std::make_pair(s, lru_.begin()));
  return {200, describe(*s), std::nullopt};
}

Response Service::get_session(const std::string& id) {
  auto s = find(id);
  if (!s) return error_response(404, "NotFound", "unknown session '" + id + "'");
  std::unique_lock guard(s->busy, std::try_to_lock);
  if (!guard.owns_lock()) return error_response(409, "Busy", "session is generating");
  return {200, describe(*s), std::nullopt};
}

Response Service::edit_anchors(const std::string& id, const nlohmann::json& body) {
  auto s = find(id);
  if (!s) return error_response(404, "NotFound", "unknown session '" + id + "'");
  std::unique_lock guard(s->busy, std::try_to_lock);
  if (!guard.owns_lock()) return error_response(409, "Busy", "session is generating");
  const int frames = s->seq.length();
  try {
    if (!body.is_object()) fail(ErrorCode::kSchemaError, "request body must be a JSON object");
    KeyframeMask mask = s->mask;
    cfm::Mat anchors = s->anchors;
    auto in_range = [&](int f) {
      if (f < 0 || f >= frames) fail(ErrorCode::kParameterOutOfRange, "frame " + std::to_string(f) + " out of range");
    };

    if (body.contains("moves")) {
      const auto& moves = body.at("moves");
      if (!moves.is_array()) fail(ErrorCode::kSchemaError, "'moves' must be an array");
      std::set<int> sources, targets;
      std::vector<std::pair<int, int>> list;
      for (const auto& m : moves) {
        const int from = required_int(m, "from_frame");
        const int to = required_int(m, "to_frame");
        in_range(from);
        in_range(to);
        if (!mask[from]) fail(ErrorCode::kParameterOutOfRange, "frame " + std::to_string(from) + " is not an anchor");
        if (!sources.insert(from).second) fail(ErrorCode::kParameterOutOfRange, "anchor moved twice");
        if (!targets.insert(to).second) fail(ErrorCode::kParameterOutOfRange, "overlapping move targets");
        list.emplace_back(from, to);
      }
      for (int to : targets) {
        if (mask[to] && !sources.count(to)) {
          fail(ErrorCode::kParameterOutOfRange, "frame " + std::to_string(to) + " already holds an anchor");
        }
      }
      // All sources are lifted before any target is written, so chains and swaps work.
      std::vector<Eigen::RowVectorXd> poses;
      for (const auto& [from, to] : list) poses.push_back(anchors.row(from));
      for (const auto& [from, to] : list) mask[from] = false;
      for (std::size_t k = 0; k < list.size(); ++k) {
        anchors.row(list[k].second) = poses[k];
        mask[list[k].second] = true;
      }
    }

    if (body.contains("pose_edits")) {
      const auto& edits = body.at("pose_edits");
      if (!edits.is_array()) fail(ErrorCode::kSchemaError, "'pose_edits' must be an array");
      for (const auto& e : edits) {
        const int f = required_int(e, "frame");
        const int j = required_int(e, "joint_index");
        in_range(f);
        if (j < 0 || j >= kNumJoints) fail(ErrorCode::kParameterOutOfRange, "joint " + std::to_string(j) + " out of range");
        RotMatrix r;
        if (e.contains("rot6d")) {
          const auto v = number_array(e, "rot6d", 6);
          Rot6D r6;
          for (int k = 0; k < 6; ++k) r6[k] = v[k];
          r = rot6d_to_matrix(r6);
        } else if (e.contains("axis_angle")) {
          const auto v = number_array(e, "axis_angle", 3);
          r = axis_angle_to_matrix(Eigen::Vector3d(v[0], v[1], v[2]));
        } else {
          fail(ErrorCode::kSchemaError, "pose edit needs 'rot6d' or 'axis_angle'");
        }
        // Editing a free frame promotes it to an anchor holding the loaded pose.
        if (!mask[f]) {
          anchors.row(f) = cfm::to_mat(s->seq).row(f);
          mask[f] = true;
        }
        const Rot6D r6 = matrix_to_rot6d(r);
        for (int k = 0; k < 6; ++k) anchors(f, 6 * j + k) = r6[k];
      }
    }
    s->mask = std::move(mask);
    s->anchors = std::move(anchors);
  } catch (const Error& e) {
    return error_response(422, to_string(e.code()), e.detail());
  } catch (const nlohmann::json::exception& e) {
    return error_response(422, "SchemaError", e.what());
  }
  return {200, describe(*s), std::nullopt};
}

Response Service::generate(const std::string& id, const nlohmann::json& body) {
  auto s = find(id);
  if (!s) return error_response(404, "NotFound", "unknown session '" + id + "'");
  std::unique_lock guard(s->busy, std::try_to_lock);
  if (!guard.owns_lock()) return error_response(409, "Busy", "a generation is already running for this session");
  MotionSequence gen;
  try {
    const nlohmann::json req = body.is_null() ? nlohmann::json::object() : body;
    if (!req.is_object()) fail(ErrorCode::kSchemaError, "request body must be a JSON object");
    cfm::SampleRequest sr;
    sr.mask = s->mask;
    sr.anchors = s->anchors;
    sr.steps = req.value("steps", cfg_.steps);
    sr.gamma = req.value("gamma", cfg_.gamma);
    sr.seed = req.value("seed", std::uint64_t{0});
    sr.integrator = req.contains("integrator") ? cfm::integrator_from_string(req.at("integrator").get<std::string>())
                                               : cfg_.integrator;
    if (req.value("use_text", true)) sr.text = s->text;
    if (sr.steps < 1 || sr.steps > opts_.max_steps) {
      fail(ErrorCode::kStepsInvalid, "steps must lie in [1, " + std::to_string(opts_.max_steps) + "]");
    }
    const int pad = req.value("pad", 0);
    if (pad > 0) cfm::pad_anchors(sr.mask, sr.anchors, pad);
    gen = cfm::sample_sequence(model_, sr, s->seq.fps);
  } catch (const Error& e) {
    return error_response(status_for(e.code()), to_string(e.code()), e.detail());
  } catch (const nlohmann::json::exception& e) {
    return error_response(422, "SchemaError", e.what());
  }

  nlohmann::json joints = nlohmann::json::array();
  for (int f = 0; f < gen.length(); ++f) {
    const JointPositions p = forward_kinematics(gen.pose(f), skel_);
    nlohmann::json frame = nlohmann::json::array();
    for (int j = 0; j < kNumJoints; ++j) frame.push_back({p(j, 0), p(j, 1), p(j, 2)});
    joints.push_back(std::move(frame));
  }
  const std::string gen_id = "g" + std::to_string(s->next_gen++);
  s->history.emplace(gen_id, std::move(gen));
  s->history_order.push_back(gen_id);
  while (s->history_order.size() > opts_.max_history) {
    s->history.erase(s->history_order.front());
    s->history_order.erase(s->history_order.begin());
  }
  return {200, {{"gen_id", gen_id}, {"T", s->seq.length()}, {"fps", s->seq.fps}, {"joints", std::move(joints)}},
          std::nullopt};
}

Response Service::export_generation(const std::string& id, const std::string& gen_id) {
  auto s = find(id);
  if (!s) return error_response(404, "NotFound", "unknown session '" + id + "'");
  std::unique_lock guard(s->busy, std::try_to_lock);
  if (!guard.owns_lock()) return error_response(409, "Busy", "session is generating");
  auto it = s->history.find(gen_id);
  if (it == s->history.end()) return error_response(404, "NotFound", "unknown generation '" + gen_id + "'");
  Response r;
  r.bytes = encode_sprk(it->second);
  return r;
}

}  // namespace keyflow::svc
