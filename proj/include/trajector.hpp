#pragma once

#include "trajector/error.hpp"
#include "trajector/eval.hpp"
#include "trajector/face3d.hpp"
#include "trajector/features.hpp"
#include "trajector/fusion.hpp"
#include "trajector/ingest.hpp"
#include "trajector/io.hpp"
#include "trajector/model.hpp"
#include "trajector/parallel.hpp"
#include "trajector/phase.hpp"
#include "trajector/pipeline.hpp"
#include "trajector/rng.hpp"
#include "trajector/shape_model.hpp"
#include "trajector/synth.hpp"
