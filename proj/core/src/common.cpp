// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#include "vedit/common.hpp"

namespace vedit {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::EmptyTargetSet: return "EmptyTargetSet";
        case ErrorCode::SequenceTooLong: return "SequenceTooLong";
        case ErrorCode::InvalidSteps: return "InvalidSteps";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::SigmaOutOfRange: return "SigmaOutOfRange";
        case ErrorCode::NonDecreasingSigma: return "NonDecreasingSigma";
        case ErrorCode::OddHeadDim: return "OddHeadDim";
        case ErrorCode::PositionOutOfRange: return "PositionOutOfRange";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::Empty: return "Empty";
        case ErrorCode::InvariantViolation: return "InvariantViolation";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::CorruptManifest: return "CorruptManifest";
        case ErrorCode::OffsetOutOfRange: return "OffsetOutOfRange";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::CrcMismatch: return "CrcMismatch";
        case ErrorCode::MissingTensor: return "MissingTensor";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::TaskHeadMismatch: return "TaskHeadMismatch";
        case ErrorCode::UnknownSweepAxis: return "UnknownSweepAxis";
        case ErrorCode::IoError: return "IoError";
    }
    return "UnknownError";
}

}  // namespace vedit
