#pragma once

#include <stdexcept>
#include <string>

namespace gma {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or command-line input (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a documented contract (CLI exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

#define GMA_DEFINE_DATA_ERROR(Name)  \
  class Name : public DataError {    \
   public:                           \
    using DataError::DataError;      \
  }

// keypoint_io
GMA_DEFINE_DATA_ERROR(MalformedDocument);
GMA_DEFINE_DATA_ERROR(FrameCountMismatch);
GMA_DEFINE_DATA_ERROR(InvalidSchema);

// blur_pipeline
GMA_DEFINE_DATA_ERROR(NoValidHeadDetection);
GMA_DEFINE_DATA_ERROR(DimensionMismatch);

// feature_prep
GMA_DEFINE_DATA_ERROR(DegenerateSnippet);
GMA_DEFINE_DATA_ERROR(FormatError);

// neural
GMA_DEFINE_DATA_ERROR(ShapeMismatch);
GMA_DEFINE_DATA_ERROR(SingleClassDataset);
GMA_DEFINE_DATA_ERROR(VersionMismatch);
GMA_DEFINE_DATA_ERROR(ChecksumFailure);

// evaluation
GMA_DEFINE_DATA_ERROR(TooFewSamples);

// agreement
GMA_DEFINE_DATA_ERROR(EmptyOverlap);
GMA_DEFINE_DATA_ERROR(DegenerateMarginals);

// study_service
GMA_DEFINE_DATA_ERROR(PoolTooSmall);
GMA_DEFINE_DATA_ERROR(UnknownStudy);
GMA_DEFINE_DATA_ERROR(UnknownSession);
GMA_DEFINE_DATA_ERROR(OutOfOrder);
GMA_DEFINE_DATA_ERROR(AlreadyLabelled);
GMA_DEFINE_DATA_ERROR(InvalidLabel);
GMA_DEFINE_DATA_ERROR(JournalCorrupt);
GMA_DEFINE_DATA_ERROR(StudyExists);

#undef GMA_DEFINE_DATA_ERROR

}  // namespace gma
