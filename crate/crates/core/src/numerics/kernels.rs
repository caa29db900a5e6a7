//! Pure forward kernels. Reductions run left to right in index order so
//! results are bitwise reproducible.

use super::{NumericsError, Tensor};

fn check_finite(x: &Tensor, what: &str) -> Result<(), NumericsError> {
    x.ensure_finite(what)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor, NumericsError> {
    let (rows, cols) = x.dims2()?;
    check_finite(x, "softmax_rows input")?;
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    Ok(out)
}

fn check_segments(segment_ids: &[usize], rows: usize, num_segments: usize) -> Result<(), NumericsError> {
    if segment_ids.len() != rows {
        return Err(NumericsError::Shape(format!(
            "{} segment ids for {rows} rows",
            segment_ids.len()
        )));
    }
    if let Some(&bad) = segment_ids.iter().find(|&&s| s >= num_segments) {
        return Err(NumericsError::SegmentOutOfRange {
            id: bad,
            num_segments,
        });
    }
    Ok(())
}

/// Softmax over the rows sharing a segment id, independently per column.
/// Segment ids need not be sorted.
pub fn scatter_softmax(
    values: &Tensor,
    segment_ids: &[usize],
    num_segments: usize,
) -> Result<Tensor, NumericsError> {
    let (rows, cols) = values.dims2()?;
    check_segments(segment_ids, rows, num_segments)?;
    check_finite(values, "scatter_softmax input")?;

    let mut max = vec![f64::NEG_INFINITY; num_segments * cols];
    for (r, &s) in segment_ids.iter().enumerate() {
        for c in 0..cols {
            let m = &mut max[s * cols + c];
            *m = m.max(values.get(r, c));
        }
    }
    let mut out = Tensor::zeros(&[rows, cols]);
    let mut total = vec![0.0; num_segments * cols];
    for (r, &s) in segment_ids.iter().enumerate() {
        for c in 0..cols {
            let e = (values.get(r, c) - max[s * cols + c]).exp();
            out.set(r, c, e);
            total[s * cols + c] += e;
        }
    }
    for (r, &s) in segment_ids.iter().enumerate() {
        for c in 0..cols {
            let v = out.get(r, c) / total[s * cols + c];
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Sums rows into `num_segments` buckets; empty buckets stay zero.
pub fn scatter_sum(
    values: &Tensor,
    segment_ids: &[usize],
    num_segments: usize,
) -> Result<Tensor, NumericsError> {
    let (rows, cols) = values.dims2()?;
    check_segments(segment_ids, rows, num_segments)?;
    let mut out = Tensor::zeros(&[num_segments, cols]);
    for (r, &s) in segment_ids.iter().enumerate() {
        let src = values.row(r);
        let dst = &mut out.data_mut()[s * cols..(s + 1) * cols];
        for (d, v) in dst.iter_mut().zip(src) {
            *d += v;
        }
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_segment_softmax(values: &Tensor, seg: &[usize], num_segments: usize) -> Tensor {
        // Oracle: for each segment gather its rows, run a plain dense softmax per column.
        let (rows, cols) = values.dims2().unwrap();
        let mut out = Tensor::zeros(&[rows, cols]);
        for s in 0..num_segments {
            let members: Vec<usize> = (0..rows).filter(|&r| seg[r] == s).collect();
            for c in 0..cols {
                let col: Vec<f64> = members.iter().map(|&r| values.get(r, c)).collect();
                let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = col.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (i, &r) in members.iter().enumerate() {
                    out.set(r, c, exps[i] / z);
                }
            }
        }
        out
    }

    fn naive_scatter_sum(values: &Tensor, seg: &[usize], num_segments: usize) -> Tensor {
        let (rows, cols) = values.dims2().unwrap();
        let mut out = Tensor::zeros(&[num_segments, cols]);
        for r in 0..rows {
            for c in 0..cols {
                let v = out.get(seg[r], c) + values.get(r, c);
                out.set(seg[r], c, v);
            }
        }
        out
    }

    #[test]
    fn softmax_symmetric_and_shift_invariant() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![7.5, 7.5]]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);
        for c in [-40.0, 0.0, 3.25, 1e6] {
            let y = softmax_rows(&Tensor::from_rows(&[vec![c, c, c]]).unwrap()).unwrap();
            for v in y.data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let y = softmax_rows(&Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap()).unwrap();
        // exp(-1000) underflows to 0 even in extended precision (true value ~5e-435).
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[1], 0.0);
        let y = softmax_rows(&Tensor::from_rows(&[vec![1000.0, 999.0]]).unwrap()).unwrap();
        // 1/(1+e^-1) = 0.7310585786300049
        assert!((y.data()[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(softmax_rows(&x), Err(NumericsError::NonFinite(_))));
    }

    #[test]
    fn scatter_softmax_uniform_and_single() {
        let v = Tensor::from_rows(&[vec![2.0], vec![2.0], vec![2.0], vec![-9.0]]).unwrap();
        let y = scatter_softmax(&v, &[0, 0, 0, 1], 2).unwrap();
        for r in 0..3 {
            assert!((y.get(r, 0) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(y.get(3, 0), 1.0);
    }

    #[test]
    fn scatter_softmax_fixed_instance_matches_dense() {
        let v = Tensor::from_rows(&[
            vec![0.3, -1.2],
            vec![1.7, 0.4],
            vec![-0.5, 2.2],
            vec![0.9, 0.0],
            vec![-2.1, 1.1],
            vec![0.05, -0.7],
            vec![3.3, 0.6],
        ])
        .unwrap();
        let seg = [0, 0, 0, 1, 1, 1, 1];
        let y = scatter_softmax(&v, &seg, 2).unwrap();
        let oracle = dense_segment_softmax(&v, &seg, 2);
        assert!(y.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn scatter_errors_and_empty_segments() {
        let v = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            scatter_softmax(&v, &[0, 3], 2),
            Err(NumericsError::SegmentOutOfRange { id: 3, .. })
        ));
        assert!(scatter_sum(&v, &[0, 2], 2).is_err());
        let s = scatter_sum(&v, &[2, 2], 4).unwrap();
        assert_eq!(s.data(), &[0.0, 0.0, 3.0, 0.0]);
        // segment 1 is never referenced: allowed
        assert!(scatter_softmax(&v, &[0, 2], 3).is_ok());
    }

    #[test]
    fn scatter_sum_basic_cases() {
        let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(scatter_sum(&v, &[0, 0, 0], 1).unwrap().data(), &[9.0, 12.0]);
        assert_eq!(scatter_sum(&v, &[0, 1, 2], 3).unwrap(), v);
    }

    #[test]
    fn sigmoid_closed_forms() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
    }

    fn instance() -> impl Strategy<Value = (Tensor, Vec<usize>, usize)> {
        (1usize..=64, 1usize..=4, 1usize..=6).prop_flat_map(|(k, cols, nseg)| {
            (
                proptest::collection::vec(-30.0f64..30.0, k * cols),
                proptest::collection::vec(0..nseg, k),
            )
                .prop_map(move |(data, seg)| (Tensor::new(vec![k, cols], data).unwrap(), seg, nseg))
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(data in proptest::collection::vec(-500.0f64..500.0, 1..40), cols in 1usize..5) {
            let rows = data.len() / cols;
            prop_assume!(rows > 0);
            let x = Tensor::new(vec![rows, cols], data[..rows * cols].to_vec()).unwrap();
            let y = softmax_rows(&x).unwrap();
            for r in 0..rows {
                let s: f64 = y.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(y.row(r).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn scatter_softmax_matches_dense_oracle((v, seg, nseg) in instance()) {
            let y = scatter_softmax(&v, &seg, nseg).unwrap();
            prop_assert!(y.max_abs_diff(&dense_segment_softmax(&v, &seg, nseg)) < 1e-12);
        }

        #[test]
        fn scatter_sum_matches_loop((v, seg, nseg) in instance()) {
            let y = scatter_sum(&v, &seg, nseg).unwrap();
            prop_assert_eq!(y, naive_scatter_sum(&v, &seg, nseg));
        }

        #[test]
        fn kernels_are_deterministic((v, seg, nseg) in instance()) {
            let a = scatter_softmax(&v, &seg, nseg).unwrap();
            let b = scatter_softmax(&v, &seg, nseg).unwrap();
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
