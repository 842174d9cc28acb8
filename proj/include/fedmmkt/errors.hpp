#pragma once

#include <stdexcept>
#include <string>

namespace fedmmkt {

// Base class for all simulator errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An operation received input violating its preconditions (dim mismatch,
// non-finite values, out-of-range label, ...).
struct InvalidInputError : Error {
    using Error::Error;
};

// Configuration file / flag problems. Carries the offending field name in
// the message.
struct ConfigError : Error {
    using Error::Error;
};

// A training loop produced a non-finite loss.
struct TrainingDivergedError : Error {
    int epoch;
    explicit TrainingDivergedError(int epoch_index)
        : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch_index)),
          epoch(epoch_index) {}
};

// World construction could not satisfy the prototype-separation invariant.
struct ConstructionError : Error {
    using Error::Error;
};

// Decoder pretraining failed (rank deficiency: rep_dim < classes).
struct PretrainError : Error {
    using Error::Error;
};

// Inter-modal fusion was asked to run without both modalities present.
struct ModalityAbsentError : Error {
    using Error::Error;
};

// A contrastive score was requested for a batch of fewer than two records.
struct ContrastiveDegenerateError : Error {
    using Error::Error;
};

// A metric was evaluated on an empty sample.
struct UndefinedMetricError : Error {
    using Error::Error;
};

}  // namespace fedmmkt
