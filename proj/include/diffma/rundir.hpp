#pragma once

#include "diffma/kvconfig.hpp"

#include <string>

namespace diffma {

/// Returns the run root: $DIFFMA_RUN_ROOT if set, else "./runs".
std::string default_run_root();

/// An isolated output directory for one subcommand invocation. Creation takes
/// an exclusive lock file so two writers cannot share a directory; the lock
/// is released on destruction.
class RunDir {
 public:
  /// Creates <root>/<name> (and parents). Throws if another live writer holds
  /// the lock.
  RunDir(const std::string& root, const std::string& name);
  ~RunDir();

  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const std::string& path() const { return path_; }
  std::string subdir(const std::string& name) const;   // creates it
  std::string file(const std::string& name) const;

  /// Writes the fully resolved config snapshot as config.kv.
  void write_config(const KvConfig& cfg) const;

  void log(const std::string& line) const;

 private:
  std::string path_;
  std::string lock_path_;
  int lock_fd_ = -1;
};

}  // namespace diffma
