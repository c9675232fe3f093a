#pragma once

#include <stdexcept>
#include <string>

namespace escape {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotConnected : Error {
  NotConnected() : Error("graph is not strongly connected") {}
};
struct NoSelfLoop : Error {
  NoSelfLoop() : Error("graph has no self-loop") {}
};
struct InvalidGraph : Error {
  using Error::Error;
};
struct Unsupported : Error {
  using Error::Error;
};
struct DivergedNaN : Error {
  explicit DivergedNaN(long iteration)
      : Error("iterates became non-finite at n=" + std::to_string(iteration)), iteration(iteration) {}
  long iteration;
};
struct NotAtMinimizer : Error {
  using Error::Error;
};
struct StepTooLarge : Error {
  using Error::Error;
};
struct ConfigInvalid : Error {
  ConfigInvalid(std::string path, const std::string& what)
      : Error(path + ": " + what), path(std::move(path)) {}
  std::string path;
};
struct MissingColumn : Error {
  explicit MissingColumn(const std::string& column) : Error("missing column '" + column + "'") {}
};
struct Inconclusive : Error {
  using Error::Error;
};

}  // namespace escape
