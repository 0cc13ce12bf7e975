// Copyright 2026 The cvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace cvqa {

/// Base class of every error raised by the library. The CLI maps subclasses
/// of ValidationError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by bad user input (configs, files, arguments).
class ValidationError : public Error {
 public:
  using Error::Error;
};

#define CVQA_DECLARE_ERROR(Name, Base)   \
  class Name : public Base {             \
   public:                               \
    explicit Name(const std::string& m)  \
        : Base(std::string(#Name ": ") + m) {} \
  };

// scm_oracle
CVQA_DECLARE_ERROR(CycleError, ValidationError)
CVQA_DECLARE_ERROR(CptError, ValidationError)
CVQA_DECLARE_ERROR(StateSpaceError, ValidationError)
CVQA_DECLARE_ERROR(UnknownVariable, ValidationError)
CVQA_DECLARE_ERROR(ValueOutOfRange, ValidationError)
CVQA_DECLARE_ERROR(CriterionError, ValidationError)
CVQA_DECLARE_ERROR(PositivityError, Error)

// data
CVQA_DECLARE_ERROR(ConfigError, ValidationError)
CVQA_DECLARE_ERROR(ParseError, ValidationError)
CVQA_DECLARE_ERROR(SchemaError, ValidationError)
CVQA_DECLARE_ERROR(TemplateMismatch, ValidationError)
CVQA_DECLARE_ERROR(VocabError, ValidationError)
CVQA_DECLARE_ERROR(IoError, Error)

// numerics and model
CVQA_DECLARE_ERROR(ShapeError, Error)
CVQA_DECLARE_ERROR(NonFiniteError, Error)
CVQA_DECLARE_ERROR(BatchTooSmall, Error)
CVQA_DECLARE_ERROR(FlagError, ValidationError)

// prompt and losses
CVQA_DECLARE_ERROR(RangeError, ValidationError)
CVQA_DECLARE_ERROR(NoSourceError, ValidationError)
CVQA_DECLARE_ERROR(LengthError, ValidationError)
CVQA_DECLARE_ERROR(QTypeError, ValidationError)

// training and metrics
CVQA_DECLARE_ERROR(EmptyReference, ValidationError)
CVQA_DECLARE_ERROR(DivergenceError, Error)

#undef CVQA_DECLARE_ERROR

}  // namespace cvqa
