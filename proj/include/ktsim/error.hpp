#pragma once

#include <stdexcept>
#include <string>

namespace ktsim {

/// Base class for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class DuplicateClient : public Error {
 public:
  explicit DuplicateClient(const std::string& id)
      : Error("duplicate client id: " + id) {}
};

class EpochGap : public Error {
 public:
  using Error::Error;
};

class NotRegistered : public Error {
 public:
  explicit NotRegistered(const std::string& id)
      : Error("client not registered: " + id) {}
};

/// Raised when asked to build a proof of misbehavior from evidence that
/// does not prove anything.
class NotConflicting : public Error {
 public:
  using Error::Error;
};

class RateLimited : public Error {
 public:
  explicit RateLimited(const std::string& id)
      : Error("more than one key change this epoch for " + id) {}
};

class UnknownSubject : public Error {
 public:
  explicit UnknownSubject(const std::string& id)
      : Error("unknown subject: " + id) {}
};

/// Scenario or configuration failed validation. `field` names the offending
/// setting or the violated invariant.
class ConfigInvalid : public Error {
 public:
  ConfigInvalid(std::string field, const std::string& why)
      : Error("invalid config '" + field + "': " + why),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class Unsupported : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ktsim
