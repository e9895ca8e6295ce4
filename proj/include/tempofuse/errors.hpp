#pragma once

#include <stdexcept>
#include <string>

namespace tempofuse {

// Base for every error raised by the library. Subclasses map onto the
// failure kinds callers are expected to distinguish.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define TEMPOFUSE_DEFINE_ERROR(Name, Base)        \
    class Name : public Base {                    \
    public:                                       \
        using Base::Base;                         \
    }

// Configuration and input-shape problems (CLI exit code 2).
TEMPOFUSE_DEFINE_ERROR(ConfigError, Error);
TEMPOFUSE_DEFINE_ERROR(InvalidConfig, ConfigError);

// Numeric failures (CLI exit code 3).
TEMPOFUSE_DEFINE_ERROR(NumericError, Error);
TEMPOFUSE_DEFINE_ERROR(NonPositiveDisparity, NumericError);
TEMPOFUSE_DEFINE_ERROR(NonPositiveDepth, NumericError);
TEMPOFUSE_DEFINE_ERROR(NonPositiveVariance, NumericError);
TEMPOFUSE_DEFINE_ERROR(DegenerateGeometry, NumericError);
TEMPOFUSE_DEFINE_ERROR(NonFiniteLoss, NumericError);

TEMPOFUSE_DEFINE_ERROR(DimensionMismatch, Error);
TEMPOFUSE_DEFINE_ERROR(FrameOutOfRange, Error);
TEMPOFUSE_DEFINE_ERROR(DisparityRangeInvalid, Error);
TEMPOFUSE_DEFINE_ERROR(ChannelOrderMismatch, Error);
TEMPOFUSE_DEFINE_ERROR(EmptyPairSet, Error);
TEMPOFUSE_DEFINE_ERROR(EmptyMask, Error);
TEMPOFUSE_DEFINE_ERROR(IoError, Error);

#undef TEMPOFUSE_DEFINE_ERROR

}  // namespace tempofuse
