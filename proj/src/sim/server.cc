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
#include "servefuzz/sim/server.h"

#include <deque>
#include <stdexcept>
#include <utility>

#include "httplib.h"
#include "json.hpp"
#include "servefuzz/trace/prompt.h"
#include "servefuzz/trace/trace.h"

namespace servefuzz::sim {

using nlohmann::json;

struct SimServer::Stream {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<json> chunks;
  bool done = false;
  bool failed = false;
  int n = 1;
  bool logprobs = false;
};

namespace {

json ChoiceChunk(const TokenEmission& e) {
  json choice = {{"index", e.completion},
                 {"text", " " + trace::TokenText(e.token)},
                 {"token_id", e.token},
                 {"logprobs", nullptr}};
  if (e.logprobs) {
    json top = json::object();
    json ids = json::array();
    for (const exec::TokenLogprob& t : *e.logprobs) {
      top[" " + trace::TokenText(t.token)] = t.logprob;
      ids.push_back({t.token, t.logprob});
    }
    double chosen = 0.0;
    for (const exec::TokenLogprob& t : *e.logprobs) {
      if (t.token == e.token) chosen = t.logprob;
    }
    choice["logprobs"] = {{"tokens", {" " + trace::TokenText(e.token)}},
                          {"token_logprobs", {chosen}},
                          {"top_logprobs", {top}},
                          {"top_ids", ids}};
  }
  return choice;
}

json ErrorBody(const std::string& message) {
  return {{"error", {{"message", message}, {"type", "invalid_request_error"}}}};
}

}  // namespace

SimServer::SimServer(SimConfig config, ServerOptions options)
    : config_(std::move(config)),
      options_(std::move(options)),
      http_(std::make_unique<httplib::Server>()),
      engine_(config_) {}

SimServer::~SimServer() { Stop(); }

int64_t SimServer::WallSimNow() const {
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - wall0_)
                        .count();
  return static_cast<int64_t>(ms / options_.time_scale);
}

int SimServer::Start() {
  InstallRoutes();
  const int threads = options_.worker_threads;
  http_->new_task_queue = [threads] {
    return new httplib::ThreadPool(static_cast<size_t>(threads));
  };
  if (options_.port == 0) {
    port_ = http_->bind_to_any_port(options_.host);
  } else {
    port_ = http_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ <= 0) {
    throw std::runtime_error("cannot bind " + options_.host + ":" +
                             std::to_string(options_.port));
  }
  wall0_ = std::chrono::steady_clock::now();
  core_ = std::thread([this] { CoreLoop(); });
  listener_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return port_;
}

void SimServer::Stop() {
  stop_ = true;
  cv_.notify_all();
  if (http_) http_->stop();
  if (core_.joinable()) core_.join();
  if (listener_.joinable()) listener_.join();
}

void SimServer::Wait() {
  if (listener_.joinable()) listener_.join();
}

void SimServer::CoreLoop() {
  while (!stop_.load()) {
    std::unique_lock<std::mutex> lock(mu_);
    if (engine_.Idle()) {
      cv_.wait_for(lock, std::chrono::milliseconds(20));
      if (engine_.Idle()) engine_.AdvanceTo(WallSimNow());
      continue;
    }
    const auto tick_wall = std::chrono::steady_clock::now();
    TickResult tick = engine_.Tick();
    for (const TokenEmission& e : tick.tokens) {
      auto it = streams_.find(e.request_id);
      if (it == streams_.end()) continue;
      std::lock_guard<std::mutex> sl(it->second->mu);
      it->second->chunks.push_back(ChoiceChunk(e));
      it->second->cv.notify_all();
    }
    for (const Termination& t : tick.finished) {
      auto it = streams_.find(t.request_id);
      if (it == streams_.end()) continue;
      {
        std::lock_guard<std::mutex> sl(it->second->mu);
        it->second->done = true;
        it->second->failed = t.status == exec::OutcomeStatus::kServerError;
        it->second->cv.notify_all();
      }
      streams_.erase(it);
    }
    const bool crashed = engine_.crashed();
    if (crashed) {
      for (auto& [id, s] : streams_) {
        std::lock_guard<std::mutex> sl(s->mu);
        s->done = s->failed = true;
        s->cv.notify_all();
      }
      streams_.clear();
    }
    const double tick_sim_ms = static_cast<double>(tick.end_ms - tick.start_ms);
    lock.unlock();
    if (crashed) {
      crashed_ = true;
      http_->stop();
      return;
    }
    std::this_thread::sleep_until(
        tick_wall + std::chrono::microseconds(
                        static_cast<int64_t>(tick_sim_ms * options_.time_scale * 1000)));
  }
}

void SimServer::InstallRoutes() {
  http_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard<std::mutex> lock(mu_);
    json body = {{"status", "ok"},
                 {"now_ms", engine_.now_ms()},
                 {"kv_next_seq", engine_.kv_events().size()}};
    res.set_content(body.dump(), "application/json");
  });

  http_->Post("/reset", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [id, s] : streams_) {
      std::lock_guard<std::mutex> sl(s->mu);
      s->done = s->failed = true;
      s->cv.notify_all();
    }
    streams_.clear();
    engine_.Reset();
    wall0_ = std::chrono::steady_clock::now();
    res.set_content(R"({"status":"reset"})", "application/json");
  });

  http_->Get("/v1/kv_events", [this](const httplib::Request& req, httplib::Response& res) {
    size_t since = 0;
    if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
    std::string body;
    std::lock_guard<std::mutex> lock(mu_);
    const std::vector<exec::KvEvent>& events = engine_.kv_events();
    for (size_t i = since; i < events.size(); ++i) {
      json j = exec::ToJson(events[i]);
      j["seq"] = i;
      body += j.dump();
      body += '\n';
    }
    res.set_content(body, "application/x-ndjson");
  });

  http_->Post("/v1/cancel", [this](const httplib::Request& req, httplib::Response& res) {
    json j = json::parse(req.body, nullptr, false);
    if (!j.is_object() || !j.contains("request_id") || !j["request_id"].is_string()) {
      res.status = 400;
      res.set_content(ErrorBody("request_id required").dump(), "application/json");
      return;
    }
    std::lock_guard<std::mutex> lock(mu_);
    const bool ok = engine_.Cancel(j["request_id"].get<std::string>());
    res.set_content(json{{"cancelled", ok}}.dump(), "application/json");
    cv_.notify_all();
  });

  http_->Post("/v1/completions", [this](const httplib::Request& req,
                                        httplib::Response& res) {
    json j = json::parse(req.body, nullptr, false);
    auto reject = [&](int status, const std::string& msg) {
      res.status = status;
      res.set_content(ErrorBody(msg).dump(), "application/json");
    };
    if (!j.is_object() || !j.contains("prompt") || !j["prompt"].is_string()) {
      return reject(400, "prompt must be a string");
    }
    SimRequest r;
    try {
      r.prompt = trace::ParseText(j["prompt"].get<std::string>(), config_.vocab_size);
      r.adapter = j.value("model", std::string(trace::kBaseAdapter));
      r.max_tokens = j.value("max_tokens", int64_t{16});
      r.temperature = j.value("temperature", 1.0);
      r.seed = j.value("seed", uint64_t{0});
      if (j.contains("logprobs") && j["logprobs"].is_number_integer()) {
        r.logprobs = j["logprobs"].get<int>();
      }
      r.n = j.value("n", 1);
    } catch (const json::exception& e) {
      return reject(400, e.what());
    }
    for (trace::Token t : r.prompt) {
      if (t < 0) return reject(400, "prompt contains an unknown token");
    }
    const bool stream = j.value("stream", false);
    auto s = std::make_shared<Stream>();
    s->n = r.n;
    s->logprobs = r.logprobs.has_value();
    std::string id;
    {
      std::lock_guard<std::mutex> lock(mu_);
      id = req.has_header("X-Request-Id") ? req.get_header_value("X-Request-Id")
                                          : "req-" + std::to_string(next_id_++);
      r.request_id = id;
      r.arrival_ms = std::max(engine_.now_ms(), WallSimNow());
      if (engine_.Idle()) engine_.AdvanceTo(r.arrival_ms);
      std::string err = engine_.Submit(std::move(r));
      if (!err.empty()) return reject(engine_.crashed() ? 503 : 400, err);
      streams_[id] = s;
    }
    cv_.notify_all();

    if (stream) {
      res.set_chunked_content_provider(
          "text/event-stream",
          [s, id](size_t, httplib::DataSink& sink) {
            std::unique_lock<std::mutex> sl(s->mu);
            s->cv.wait_for(sl, std::chrono::milliseconds(50),
                           [&] { return !s->chunks.empty() || s->done; });
            while (!s->chunks.empty()) {
              json frame = {{"id", id}, {"object", "text_completion"},
                            {"choices", {s->chunks.front()}}};
              s->chunks.pop_front();
              const std::string line = "data: " + frame.dump() + "\n\n";
              if (!sink.write(line.data(), line.size())) return false;
            }
            if (s->done) {
              if (s->failed) return false;
              const std::string tail = "data: [DONE]\n\n";
              sink.write(tail.data(), tail.size());
              sink.done();
            }
            return sink.is_writable();
          },
          [this, s, id](bool success) {
            if (success) return;
            std::lock_guard<std::mutex> lock(mu_);
            if (!crashed_.load()) engine_.Abort(id);
          });
      return;
    }

    std::unique_lock<std::mutex> sl(s->mu);
    s->cv.wait(sl, [&] { return s->done; });
    if (s->failed) {
      return reject(500, "engine failure");
    }
    std::vector<json> texts(static_cast<size_t>(s->n), "");
    std::vector<json> ids(static_cast<size_t>(s->n), json::array());
    std::vector<json> tops(static_cast<size_t>(s->n), json::array());
    for (const json& c : s->chunks) {
      const size_t k = c["index"].get<size_t>();
      texts[k] = texts[k].get<std::string>() + c["text"].get<std::string>();
      ids[k].push_back(c["token_id"]);
      if (!c["logprobs"].is_null()) tops[k].push_back(c["logprobs"]["top_ids"]);
    }
    json choices = json::array();
    for (size_t k = 0; k < texts.size(); ++k) {
      json choice = {{"index", k}, {"text", texts[k]}, {"token_ids", ids[k]},
                     {"finish_reason", "length"}};
      if (s->logprobs) choice["logprobs"] = {{"top_ids", tops[k]}};
      choices.push_back(choice);
    }
    res.set_content(json{{"id", id}, {"object", "text_completion"}, {"choices", choices}}.dump(),
                    "application/json");
  });
}

}  // namespace servefuzz::sim
