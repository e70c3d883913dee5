//! File formats: PFM for float maps, PNG for colour, masks and labels,
//! OBJ and binary PLY for meshes.

mod mesh;
mod pfm;
mod png;

pub use self::mesh::{
    decode_obj, decode_ply, encode_obj, encode_ply, read_obj, read_ply, write_obj, write_ply, TriMesh,
};
pub use self::pfm::{
    curvature_to_pfm, decode_pfm, encode_pfm, pfm_to_curvature, pfm_to_scalar, pfm_to_vec3, read_curvature_pfm,
    read_pfm, read_scalar_pfm, read_vec3_pfm, scalar_to_pfm, vec3_to_pfm, write_curvature_pfm, write_scalar_pfm,
    write_vec3_pfm, PfmImage,
};
pub use self::png::{
    palette_color, read_label_png, read_mask_png, read_rgb_image, read_rgb_png, write_label_palette_png,
    write_label_png, write_mask_png, write_rgb_image, write_rgb_png,
};
