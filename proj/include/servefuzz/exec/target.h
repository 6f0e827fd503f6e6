// Copyright 2026 The servefuzz Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#ifndef SERVEFUZZ_EXEC_TARGET_H_
#define SERVEFUZZ_EXEC_TARGET_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "servefuzz/exec/report.h"
#include "servefuzz/trace/prompt.h"
#include "servefuzz/trace/trace.h"

namespace servefuzz::sim {
class Engine;
struct SimConfig;
}  // namespace servefuzz::sim

namespace servefuzz::exec {

enum class EngineKind { kSimulator, kGenericOpenAi };

// base_url "sim://virtual" selects the in-process virtual-time simulator;
// its config_flags are SimConfig keys.
struct EngineEndpoint {
  std::string base_url = "sim://virtual";
  EngineKind engine_kind = EngineKind::kSimulator;
  std::map<std::string, std::string> config_flags;
  int64_t health_timeout_ms = 2000;
};

struct ExecOptions {
  int64_t schedule_tolerance_ms = 5;
  int64_t request_timeout_ms = 60000;
  int64_t kv_grace_ms = 2000;
  trace::PromptCorpus corpus;
};

// The endpoint could not be used at all. Distinct from a mid-trace crash,
// which is data in the report.
class EndpointUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedOperation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ApiCall {
  enum class Transport { kNone, kHttpPost, kAbort };
  Transport transport = Transport::kNone;
  std::string path;
  nlohmann::json body;
  std::string description;
};

// Total over the four event kinds. Wait never touches the network.
ApiCall MapEvent(const trace::TraceEvent& event, EngineKind kind,
                 const trace::PromptCorpus& corpus);

// Body of the completion call for a Send.
nlohmann::json CompletionBody(const trace::RequestSpec& spec,
                              const trace::PromptCorpus& corpus);

class Target {
 public:
  virtual ~Target() = default;

  virtual ExecutionReport Execute(const trace::TimedTrace& trace) = 0;
  virtual bool SupportsReset() const = 0;
  // Throws UnsupportedOperation when !SupportsReset().
  virtual void Reset() = 0;
  virtual bool Healthy() = 0;
  // True when identical inputs after Reset() give identical timing too.
  virtual bool VirtualTime() const = 0;
  virtual std::string Describe() const = 0;
};

// Runs the simulator core in virtual time inside this process. Sends arrive
// at exactly their offset and are admitted at the next tick boundary.
class VirtualSimTarget : public Target {
 public:
  VirtualSimTarget(const sim::SimConfig& config, ExecOptions options);
  ~VirtualSimTarget() override;

  ExecutionReport Execute(const trace::TimedTrace& trace) override;
  bool SupportsReset() const override { return true; }
  void Reset() override;
  bool Healthy() override;
  bool VirtualTime() const override { return true; }
  std::string Describe() const override;

  sim::Engine& engine() { return *engine_; }
  const ExecOptions& options() const { return options_; }

 private:
  std::unique_ptr<sim::Engine> engine_;
  ExecOptions options_;
};

// Real-time client for an OpenAI-style completion endpoint. The simulator
// kind adds a cancel endpoint, the KV side stream and reset.
class HttpTarget : public Target {
 public:
  HttpTarget(EngineEndpoint endpoint, ExecOptions options);

  ExecutionReport Execute(const trace::TimedTrace& trace) override;
  bool SupportsReset() const override;
  void Reset() override;
  bool Healthy() override;
  bool VirtualTime() const override { return false; }
  std::string Describe() const override;

  // Empty with available=false when the engine has no side stream.
  std::vector<KvEvent> CollectKvStream(size_t since, bool* available);

 private:
  EngineEndpoint endpoint_;
  ExecOptions options_;
};

// Builds the SimConfig described by the flags. Throws std::invalid_argument.
sim::SimConfig SimConfigFromFlags(const std::map<std::string, std::string>& flags);

std::unique_ptr<Target> MakeTarget(const EngineEndpoint& endpoint,
                                   const ExecOptions& options);

}  // namespace servefuzz::exec

#endif  // SERVEFUZZ_EXEC_TARGET_H_
