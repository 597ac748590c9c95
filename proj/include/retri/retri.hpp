#pragma once

#include "retri/error.hpp"
#include "retri/tensor.hpp"
#include "retri/manifest.hpp"
#include "retri/featurepack.hpp"
#include "retri/preprocess.hpp"
#include "retri/extractor.hpp"
#include "retri/aggregate.hpp"
#include "retri/transform.hpp"
#include "retri/index.hpp"
#include "retri/enhance_rerank.hpp"
#include "retri/evaluate.hpp"
#include "retri/config.hpp"
#include "retri/pipeline.hpp"
#include "retri/confsearch.hpp"
