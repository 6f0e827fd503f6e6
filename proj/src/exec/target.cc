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
#include "servefuzz/exec/target.h"

#include <stdexcept>

#include "servefuzz/sim/config.h"

namespace servefuzz::exec {

using trace::EventKind;

nlohmann::json CompletionBody(const trace::RequestSpec& spec,
                              const trace::PromptCorpus& corpus) {
  nlohmann::json body = {
      {"model", spec.AdapterName()},
      {"prompt", trace::RenderText(trace::SynthesizePrompt(spec, corpus))},
      {"max_tokens", spec.sampling.max_tokens},
      {"temperature", spec.sampling.temperature},
      {"n", spec.sampling.n_completions},
      {"stream", spec.stream},
  };
  if (spec.sampling.seed) body["seed"] = *spec.sampling.seed;
  if (spec.sampling.logprobs) body["logprobs"] = *spec.sampling.logprobs;
  return body;
}

ApiCall MapEvent(const trace::TraceEvent& event, EngineKind kind,
                 const trace::PromptCorpus& corpus) {
  ApiCall call;
  switch (event.kind) {
    case EventKind::kSend:
      call.transport = ApiCall::Transport::kHttpPost;
      call.path = "/v1/completions";
      call.body = CompletionBody(event.spec(), corpus);
      call.description = "POST /v1/completions for '" + event.spec().request_id + "'";
      break;
    case EventKind::kCancel:
      if (kind == EngineKind::kSimulator) {
        call.transport = ApiCall::Transport::kHttpPost;
        call.path = "/v1/cancel";
        call.body = {{"request_id", event.target()}};
        call.description = "POST /v1/cancel for '" + event.target() + "'";
      } else {
        call.transport = ApiCall::Transport::kAbort;
        call.description = "abort the transport of '" + event.target() + "'";
      }
      break;
    case EventKind::kDisconnect:
      call.transport = ApiCall::Transport::kAbort;
      call.description = "abort the transport of '" + event.target() + "'";
      break;
    case EventKind::kWait:
      call.description = "idle " + std::to_string(event.duration_ms()) + " ms";
      break;
  }
  return call;
}

sim::SimConfig SimConfigFromFlags(const std::map<std::string, std::string>& flags) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : flags) {
    if (key == "faults" || key == "adapters") {
      nlohmann::json list = nlohmann::json::array();
      size_t pos = 0;
      while (pos < value.size()) {
        size_t end = value.find(',', pos);
        if (end == std::string::npos) end = value.size();
        if (end > pos) list.push_back(value.substr(pos, end - pos));
        pos = end + 1;
      }
      j[key] = list;
      continue;
    }
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
  }
  return sim::SimConfigFromJson(j);
}

std::unique_ptr<Target> MakeTarget(const EngineEndpoint& endpoint,
                                   const ExecOptions& options) {
  if (endpoint.base_url.rfind("sim://", 0) == 0) {
    return std::make_unique<VirtualSimTarget>(SimConfigFromFlags(endpoint.config_flags),
                                              options);
  }
  auto target = std::make_unique<HttpTarget>(endpoint, options);
  if (!target->Healthy()) {
    throw EndpointUnavailable("endpoint " + endpoint.base_url + " is unreachable");
  }
  return target;
}

}  // namespace servefuzz::exec
