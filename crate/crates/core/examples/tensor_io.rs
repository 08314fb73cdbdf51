//! Round-trip a response matrix through the binary tensor format.

use ndarray::Array2;
use voxscale::io::tensor::{read_array2, read_tensor_header, write_tensor, DType};

fn main() -> voxscale::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("responses.vxt");
    let y = Array2::from_shape_fn((5, 3), |(t, v)| t as f64 + 0.25 * v as f64);

    write_tensor(&y.view(), DType::Float32, &path)?;
    let header = read_tensor_header(&path)?;
    println!("dtype {:?}, shape {:?}, {} payload bytes", header.dtype, header.shape, header.payload_len());

    let back = read_array2(&path)?;
    assert_eq!(back, y);
    println!("{back}");
    Ok(())
}
