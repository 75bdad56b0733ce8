#include "diffma/rundir.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace diffma {

std::string default_run_root() {
  const char* env = std::getenv("DIFFMA_RUN_ROOT");
  if (env != nullptr && *env != '\0') return env;
  return "runs";
}

RunDir::RunDir(const std::string& root, const std::string& name) {
  path_ = (fs::path(root) / name).string();
  fs::create_directories(path_);
  lock_path_ = (fs::path(path_) / ".lock").string();
  lock_fd_ = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (lock_fd_ < 0) {
    throw std::runtime_error("run directory '" + path_ +
                             "' is locked by another writer (remove " +
                             lock_path_ + " if that writer is gone)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(lock_fd_, pid.data(), pid.size());
}

RunDir::~RunDir() {
  if (lock_fd_ >= 0) {
    ::close(lock_fd_);
    ::unlink(lock_path_.c_str());
  }
}

std::string RunDir::subdir(const std::string& name) const {
  const fs::path p = fs::path(path_) / name;
  fs::create_directories(p);
  return p.string();
}

std::string RunDir::file(const std::string& name) const {
  return (fs::path(path_) / name).string();
}

void RunDir::write_config(const KvConfig& cfg) const {
  cfg.save(file("config.kv"));
}

void RunDir::log(const std::string& line) const {
  const fs::path dir = fs::path(path_) / "logs";
  fs::create_directories(dir);
  std::ofstream out(dir / "log.txt", std::ios::app);
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%F %T", std::localtime(&tt));
  out << "[" << stamp << "] " << line << "\n";
}

}  // namespace diffma
