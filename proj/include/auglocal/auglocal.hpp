// Copyright 2026 The AugLocal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "auglocal/common.hpp"
#include "auglocal/tensor.hpp"
#include "auglocal/autodiff.hpp"
#include "auglocal/textdoc.hpp"
#include "auglocal/netspec.hpp"
#include "auglocal/auxbuild.hpp"
#include "auglocal/model.hpp"
#include "auglocal/data.hpp"
#include "auglocal/trainer.hpp"
#include "auglocal/checkpoint.hpp"
#include "auglocal/pipeline.hpp"
#include "auglocal/analysis.hpp"
#include "auglocal/config.hpp"
#include "auglocal/experiment.hpp"
