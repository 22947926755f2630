pub(crate) mod conv;
pub(crate) mod lstm;
pub(crate) mod norm;
pub(crate) mod pool;

/// Views the trailing spatial axes of a rank-3 or rank-5 tensor as three axes.
pub(crate) fn spatial3(spatial: &[usize]) -> Option<[usize; 3]> {
    match *spatial {
        [l] => Some([1, 1, l]),
        [d, h, w] => Some([d, h, w]),
        _ => None,
    }
}
