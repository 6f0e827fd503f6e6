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
#ifndef SERVEFUZZ_SIM_SERVER_H_
#define SERVEFUZZ_SIM_SERVER_H_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "servefuzz/sim/config.h"
#include "servefuzz/sim/engine.h"

namespace httplib {
class Server;
}

namespace servefuzz::sim {

struct ServerOptions {
  std::string host = "127.0.0.1";
  // 0 picks a free port.
  int port = 0;
  // Wall-clock ms per simulated ms.
  double time_scale = 1.0;
  int worker_threads = 64;
};

// Wall-clock HTTP front end. Handlers only enqueue into the engine under a
// mutex; a single core thread ticks it. An adapter-drift crash takes the
// listener down without closing streams gracefully.
class SimServer {
 public:
  SimServer(SimConfig config, ServerOptions options);
  ~SimServer();

  SimServer(const SimServer&) = delete;
  SimServer& operator=(const SimServer&) = delete;

  // Returns the bound port. Throws std::runtime_error when binding fails.
  int Start();
  void Stop();
  // Blocks until the listener exits (Stop or crash).
  void Wait();
  bool crashed() const { return crashed_.load(); }
  int port() const { return port_; }

  struct Stream;

 private:
  void CoreLoop();
  void InstallRoutes();
  int64_t WallSimNow() const;

  SimConfig config_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> http_;
  std::mutex mu_;
  std::condition_variable cv_;
  Engine engine_;
  std::map<std::string, std::shared_ptr<Stream>> streams_;
  std::chrono::steady_clock::time_point wall0_;
  std::thread core_;
  std::thread listener_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> crashed_{false};
  int port_ = 0;
  uint64_t next_id_ = 0;
};

}  // namespace servefuzz::sim

#endif  // SERVEFUZZ_SIM_SERVER_H_
