//! Built-in task descriptors. A config naming one of these task ids only
//! needs to supply the fields it wants to override.

use crate::config::{ApiListEntry, MetricSpec, TaskDescriptor};

pub const QUADRATIC_BOWL: &str = "quadratic-bowl";
pub const SYNTH_SPOTS: &str = "synth-spots";

const BOWL_API_LIST: &str = include_str!("../assets/bowl_api_list.json");
const SPOTS_API_LIST: &str = include_str!("../assets/spots_api_list.json");

const BOWL_DETAILS: &str = "\
A synthetic two-parameter response surface used to exercise the search loop. \
Each candidate pair exposes two tunable constants, p1 and p2, both in [0, 1]. \
The pipeline output is a single scalar score; inputs carry no image content.";

const BOWL_METRIC: &str = "\
`objective`: a smooth concave score with a unique maximum of 1.0. Higher is better.";

const BOWL_SKELETON: &str = "\
def postprocess_preds(preds):
    return preds
";

const SPOTS_DETAILS: &str = "\
Single-channel 64x64 fluorescence microscopy images stored as float32 in [0, 1]. \
Each image contains 5-15 diffraction-limited spots (single molecules) on a dark \
background with mild Gaussian noise. The acquisition differs from the detector's \
training data: backgrounds are brighter and intensities are non-linearly compressed. \
The detector returns a per-pixel spot probability map of the same size.";

const SPOTS_METRIC: &str = "\
`f1_score`: F1 of predicted spot coordinates against ground truth, matched greedily \
within a radius of 2 pixels. Higher is better; the maximum is 1.0.";

const SPOTS_SKELETON: &str = "\
def postprocess_preds(prob_map):
    import numpy as np
    from skimage.feature import peak_local_max
    coords = peak_local_max(prob_map, min_distance=2, threshold_abs=0.5)
    return np.asarray(coords, dtype=float)
";

const SPOTS_EXPERT_POST: &str = "\
def postprocess_preds(prob_map):
    import numpy as np
    from skimage.feature import peak_local_max
    coords = peak_local_max(prob_map, min_distance=3, threshold_abs=0.35, exclude_border=False)
    return np.asarray(coords, dtype=float)
";

/// Fills empty descriptor fields from the preset matching `task_id`, if any.
pub fn apply(td: &mut TaskDescriptor) {
    let (details, metric, skeleton, metric_name, api_list, expert_post, val_size) =
        match td.task_id.as_str() {
            QUADRATIC_BOWL => (
                BOWL_DETAILS,
                BOWL_METRIC,
                BOWL_SKELETON,
                "objective",
                BOWL_API_LIST,
                None,
                1,
            ),
            SYNTH_SPOTS => (
                SPOTS_DETAILS,
                SPOTS_METRIC,
                SPOTS_SKELETON,
                "f1_score",
                SPOTS_API_LIST,
                Some(SPOTS_EXPERT_POST),
                32,
            ),
            _ => return,
        };
    if td.dataset_details.is_empty() {
        td.dataset_details = details.to_owned();
    }
    if td.metric_details.is_empty() {
        td.metric_details = metric.to_owned();
    }
    if td.post_skeleton_source.is_empty() {
        td.post_skeleton_source = skeleton.to_owned();
    }
    if td.metric_spec.metric_names.is_empty() {
        td.metric_spec = MetricSpec::new([metric_name]);
    }
    if td.api_list.is_empty() {
        td.api_list = serde_json::from_str::<Vec<ApiListEntry>>(api_list).expect("bundled api list");
    }
    if td.expert_post_source.is_none() {
        td.expert_post_source = expert_post.map(str::to_owned);
    }
    td.metadata
        .entry("validation_size".to_owned())
        .or_insert_with(|| val_size.into());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate_task_descriptor;

    #[test]
    fn presets_validate() {
        for id in [QUADRATIC_BOWL, SYNTH_SPOTS] {
            let mut td = TaskDescriptor::new(id);
            apply(&mut td);
            assert!(validate_task_descriptor(&td, true).is_empty(), "{id}");
        }
    }

    #[test]
    fn unknown_task_untouched() {
        let mut td = TaskDescriptor::new("cellpose");
        apply(&mut td);
        assert!(td.post_skeleton_source.is_empty());
        assert!(td.metadata.is_empty());
    }

    #[test]
    fn explicit_fields_win() {
        let mut td = TaskDescriptor::new(SYNTH_SPOTS);
        td.dataset_details = "custom".into();
        apply(&mut td);
        assert_eq!(td.dataset_details, "custom");
        assert_eq!(td.metric_spec.metric_names, vec!["f1_score".to_owned()]);
    }
}
