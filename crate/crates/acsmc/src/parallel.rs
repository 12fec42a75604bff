//! Data-parallel helpers. With the `parallel` feature these run on the
//! rayon pool; without it they fall back to plain iterators. Callers never
//! see the difference beyond wall time.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Smallest number of items handed to one rayon task.
#[cfg(feature = "parallel")]
const MIN_CHUNK: usize = 16;

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().with_min_len(MIN_CHUNK).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Like [`map_range`] but for expensive items: no minimum chunk length.
pub fn map_range_coarse<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Calls `f(n, state_n, aux_n, &mut out[n])` for every particle, where
/// `state` and `aux` are flat buffers of `dim` and `aux_dim` values per
/// particle. Stops at the first error.
pub fn for_each_particle<E, F>(
    state: &mut [f64],
    dim: usize,
    aux: &mut [f64],
    aux_dim: usize,
    out: &mut [f64],
    f: F,
) -> Result<(), E>
where
    E: Send,
    F: Fn(usize, &mut [f64], &mut [f64], &mut f64) -> Result<(), E> + Sync + Send,
{
    let n = out.len();
    debug_assert_eq!(state.len(), n * dim);
    debug_assert_eq!(aux.len(), n * aux_dim);
    // chunks_mut(0) panics, so zero-width buffers get a dummy slice.
    let dim_c = dim.max(1);
    let aux_c = aux_dim.max(1);
    let mut s_dummy;
    let mut a_dummy;
    let state: &mut [f64] = if dim == 0 {
        s_dummy = vec![0.0; n];
        &mut s_dummy
    } else {
        state
    };
    let aux: &mut [f64] = if aux_dim == 0 {
        a_dummy = vec![0.0; n];
        &mut a_dummy
    } else {
        aux
    };
    let g = |(i, ((s, a), o)): (usize, ((&mut [f64], &mut [f64]), &mut f64))| {
        let s = if dim == 0 { &mut s[..0] } else { s };
        let a = if aux_dim == 0 { &mut a[..0] } else { a };
        f(i, s, a, o)
    };
    #[cfg(feature = "parallel")]
    {
        state
            .par_chunks_mut(dim_c)
            .zip(aux.par_chunks_mut(aux_c))
            .zip(out.par_iter_mut())
            .enumerate()
            .with_min_len(MIN_CHUNK)
            .try_for_each(g)
    }
    #[cfg(not(feature = "parallel"))]
    {
        state
            .chunks_mut(dim_c)
            .zip(aux.chunks_mut(aux_c))
            .zip(out.iter_mut())
            .enumerate()
            .try_for_each(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn for_each_particle_handles_empty_aux() {
        let mut s = vec![0.0; 6];
        let mut a: Vec<f64> = vec![];
        let mut o = vec![0.0; 3];
        for_each_particle::<(), _>(&mut s, 2, &mut a, 0, &mut o, |n, s, a, o| {
            assert!(a.is_empty());
            s[0] = n as f64;
            s[1] = -(n as f64);
            *o = 10.0 * n as f64;
            Ok(())
        })
        .unwrap();
        assert_eq!(s, vec![0.0, -0.0, 1.0, -1.0, 2.0, -2.0]);
        assert_eq!(o, vec![0.0, 10.0, 20.0]);
    }
}
