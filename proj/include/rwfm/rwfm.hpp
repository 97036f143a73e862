#pragma once

#include "rwfm/assignment.hpp"
#include "rwfm/checkpoint.hpp"
#include "rwfm/core.hpp"
#include "rwfm/datasets.hpp"
#include "rwfm/fields.hpp"
#include "rwfm/finetune.hpp"
#include "rwfm/flowcore.hpp"
#include "rwfm/metrics.hpp"
#include "rwfm/nnfield.hpp"
#include "rwfm/oracle.hpp"
#include "rwfm/records.hpp"
#include "rwfm/rewards.hpp"
