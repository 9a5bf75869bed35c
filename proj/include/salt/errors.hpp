// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace salt {

// Shape/size disagreement between tensors or layer specs.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Class index outside [0, K).
class LabelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// API misuse: backward on a non-scalar, stepping never-backwarded params, ...
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent layer spec while instantiating a network.
class ConstructionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad experiment / split-point / CLI configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Truncated or structurally invalid byte stream.
class FramingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Well-framed but semantically invalid message (unknown type, shape
// disagreement with the handshake, label/batch mismatch, ...).
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Transport failed mid-session; carries the batch index where it died.
class SessionError : public std::runtime_error {
public:
    SessionError(const std::string& what, long batch_index)
        : std::runtime_error(what), batch_index(batch_index) {}
    long batch_index = -1;
};

// A frozen network's parameters changed during adapter training.
class ClosedModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace salt
