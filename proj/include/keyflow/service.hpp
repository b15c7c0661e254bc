#pragma once

#include <cstddef>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyflow/cfm.hpp"
#include "keyflow/motion.hpp"
#include "keyflow/synth.hpp"

namespace httplib {
class Server;
}

namespace keyflow::svc {

struct Response {
  int status = 200;
  nlohmann::json body;
  // Set for binary payloads; body is ignored then.
  std::optional<std::string> bytes;
};

std::string base64_encode(std::string_view bytes);
// Throws FormatError on characters outside the standard alphabet or bad padding.
std::string base64_decode(std::string_view text);

struct ServiceOptions {
  std::size_t max_sessions = 32;
  std::size_t max_history = 16;
  int max_steps = 1000;
};

class Service {
 public:
  Service(cfm::FlowModel model, cfm::FlowConfig cfg, std::vector<CorpusItem> corpus = {}, ServiceOptions opts = {});

  Response health() const;
  Response skeleton() const;
  Response create_session(const nlohmann::json& body);
  Response get_session(const std::string& id);
  Response edit_anchors(const std::string& id, const nlohmann::json& body);
  Response generate(const std::string& id, const nlohmann::json& body);
  Response export_generation(const std::string& id, const std::string& gen_id);

  std::size_t session_count() const;

 private:
  struct Session {
    std::string id;
    MotionSequence seq;
    KeyframeMask mask;
    cfm::Mat anchors;  // T x 246, meaningful on mask-true rows
    std::optional<cfm::TextCondition> text;
    std::map<std::string, MotionSequence> history;
    std::vector<std::string> history_order;
    int next_gen = 1;
    std::mutex busy;  // held for the whole of an edit or a generation
  };

  std::shared_ptr<Session> find(const std::string& id);
  nlohmann::json describe(const Session& s) const;

  const cfm::FlowModel model_;
  const cfm::FlowConfig cfg_;
  const std::vector<CorpusItem> corpus_;
  const ServiceOptions opts_;
  const SkeletonDef skel_;

  mutable std::mutex mu_;
  std::list<std::string> lru_;  // most recent first
  std::unordered_map<std::string, std::pair<std::shared_ptr<Session>, std::list<std::string>::iterator>> sessions_;
  std::uint64_t next_session_ = 1;
};

// Routes with CORS headers for browser clients.
void mount(httplib::Server& server, Service& service);

}  // namespace keyflow::svc
