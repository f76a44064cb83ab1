#pragma once

#include "crsync/core.hpp"
#include "crsync/embedding.hpp"
#include "crsync/eval.hpp"
#include "crsync/ingest.hpp"
#include "crsync/neural/model.hpp"
#include "crsync/neural/network.hpp"
#include "crsync/neural/training.hpp"
#include "crsync/pipeline.hpp"
#include "crsync/recurrence.hpp"
#include "crsync/synthetic.hpp"
