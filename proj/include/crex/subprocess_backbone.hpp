#pragma once

// Backbone implemented by a child process (typically a Python worker wrapping
// a pretrained encoder-decoder). The parent speaks one JSON object per line
// over the worker's stdin/stdout:
//
//   -> {"op":"info"}
//   <- {"model_id":"...","feature_dim":512,"max_input_length":512,"max_output_length":128}
//   -> {"op":"set_training","on":true}               <- {"ok":true}
//   -> {"op":"encode","texts":[...]}                 <- {"features":[[...],...]}
//   -> {"op":"train_step","inputs":[...],"targets":[...],"weight":0.5}
//                                                    <- {"losses":[...]}
//   -> {"op":"optimizer_step","learning_rate":1e-4}  <- {"ok":true}
//   -> {"op":"zero_grad"}                            <- {"ok":true}
//   -> {"op":"generate","inputs":[...]}              <- {"outputs":[...]}
//   -> {"op":"save","dir":"..."} / {"op":"load","dir":"..."}   <- {"ok":true}
//   -> {"op":"shutdown"}                             <- {"ok":true}, then exit
//
// Workers report failures as {"error":"message"} and must exit when stdin
// closes. stderr passes through for logs.

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "crex/backbone.hpp"

namespace crex {

class SubprocessBackbone : public Backbone {
 public:
  explicit SubprocessBackbone(const std::string& command) {
    spawn(command);
    try {
      const nlohmann::json info = request({{"op", "info"}});
      model_id_ = info.at("model_id").get<std::string>();
      feature_dim_ = info.at("feature_dim").get<int>();
      max_input_ = info.at("max_input_length").get<int>();
      max_output_ = info.at("max_output_length").get<int>();
    } catch (...) {
      terminate_child();
      throw;
    }
  }

  ~SubprocessBackbone() override {
    // Fire-and-forget shutdown: never await the reply, so a misbehaving
    // worker cannot block destruction. Closing the pipes in terminate_child
    // is the fallback exit signal, with SIGKILL as the last resort.
    if (to_) {
      std::fputs("{\"op\":\"shutdown\"}\n", to_);
      std::fflush(to_);
    }
    terminate_child();
  }

  SubprocessBackbone(const SubprocessBackbone&) = delete;
  SubprocessBackbone& operator=(const SubprocessBackbone&) = delete;

  std::string model_id() const override { return model_id_; }
  int feature_dim() const override { return feature_dim_; }
  int max_input_length() const override { return max_input_; }
  int max_output_length() const override { return max_output_; }

  void set_training(bool on) override {
    request({{"op", "set_training"}, {"on", on}});
    training_ = on;
  }
  bool training() const override { return training_; }

  FeatureMatrix encode_features(const std::vector<std::string>& texts) override {
    if (texts.empty()) throw Error("encode_features: empty text list");
    const nlohmann::json reply = request({{"op", "encode"}, {"texts", texts}});
    const auto& rows = reply.at("features");
    if (rows.size() != texts.size())
      throw Error("worker returned wrong feature row count");
    FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), feature_dim_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != feature_dim_)
        throw Error("worker returned wrong feature dimension");
      for (int j = 0; j < feature_dim_; ++j) out(static_cast<Eigen::Index>(i), j) = row[j];
    }
    return out;
  }

  std::vector<double> training_step(const SeqBatch& batch, double weight = 1.0) override {
    if (!training_) throw Error("training_step requires training mode");
    validate_batch(batch);
    const nlohmann::json reply = request({{"op", "train_step"},
                                          {"inputs", batch.inputs},
                                          {"targets", batch.targets},
                                          {"weight", weight}});
    auto losses = reply.at("losses").get<std::vector<double>>();
    if (losses.size() != batch.inputs.size())
      throw Error("worker returned wrong loss count");
    return losses;
  }

  void optimizer_step(double learning_rate) override {
    request({{"op", "optimizer_step"}, {"learning_rate", learning_rate}});
  }

  void zero_grad() override { request({{"op", "zero_grad"}}); }

  std::vector<std::string> generate(const std::vector<std::string>& inputs) override {
    if (training_) throw Error("generate requires inference mode");
    const nlohmann::json reply = request({{"op", "generate"}, {"inputs", inputs}});
    auto outputs = reply.at("outputs").get<std::vector<std::string>>();
    if (outputs.size() != inputs.size()) throw Error("worker returned wrong output count");
    return outputs;
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    request({{"op", "save"}, {"dir", dir.string()}});
    write_backbone_manifest(dir, *this, "worker");
  }

  void load(const std::filesystem::path& dir) override {
    request({{"op", "load"}, {"dir", dir.string()}});
  }

 private:
  void spawn(const std::string& command) {
    // A worker that died must surface as an Error from request(), not kill
    // the parent with SIGPIPE on the next write. Process-global, set once.
    static const bool sigpipe_ignored = [] {
      std::signal(SIGPIPE, SIG_IGN);
      return true;
    }();
    (void)sigpipe_ignored;
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw Error("cannot create worker pipes");
    pid_ = ::fork();
    if (pid_ < 0) throw Error("cannot fork worker process");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      std::perror("exec worker");
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    to_ = ::fdopen(to_child[1], "w");
    from_ = ::fdopen(from_child[0], "r");
    if (!to_ || !from_) throw Error("cannot open worker streams");
  }

  nlohmann::json request(const nlohmann::json& msg) const {
    if (!to_ || !from_) throw Error("backbone worker is not running");
    const std::string line = msg.dump() + "\n";
    if (std::fputs(line.c_str(), to_) == EOF || std::fflush(to_) != 0)
      throw Error("cannot write to backbone worker");
    std::string reply;
    for (int c = std::fgetc(from_); c != '\n'; c = std::fgetc(from_)) {
      if (c == EOF) throw Error("backbone worker exited unexpectedly");
      reply.push_back(static_cast<char>(c));
    }
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("malformed worker reply: ") + e.what());
    }
    if (parsed.contains("error"))
      throw Error("worker: " + parsed["error"].get<std::string>());
    return parsed;
  }

  // Close the pipes (EOF tells the worker to exit), then reap, escalating to
  // SIGKILL if it lingers.
  void terminate_child() {
    if (to_) {
      std::fclose(to_);
      to_ = nullptr;
    }
    if (from_) {
      std::fclose(from_);
      from_ = nullptr;
    }
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 100; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) != 0) {
          pid_ = -1;
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  pid_t pid_ = -1;
  mutable FILE* to_ = nullptr;
  mutable FILE* from_ = nullptr;
  bool training_ = false;
  std::string model_id_;
  int feature_dim_ = 0;
  int max_input_ = 0;
  int max_output_ = 0;
};

}  // namespace crex
