// Wire types for the tube service HTTP API. The JSON shapes here are
// the contract; nothing in this package imports server code.

export type Method = "ensemble" | "dropout" | "swag" | "external";
export type Generator = "sobol" | "uniform_grid" | "pseudo_random";
export type RadiusConvention = "stddev" | "eigenvalue";

export interface ColormapSpec {
  palette?: string | number[][];
  suppress_color?: string | number[];
  magnitude_percentile?: number;
  magnitude_ceiling?: number;
}

export interface TubeQuery {
  method: Method;
  model?: string;
  seeds?: number[][];
  seed_box?: number[][];
  count?: number;
  generator?: Generator;
  n_samples?: number;
  n_steps?: number;
  tau?: number;
  m?: number;
  radius_convention?: RadiusConvention;
  include_mean?: boolean;
  end_cap?: boolean;
  colormap?: ColormapSpec;
  rng_seed?: number;
}

export interface TubeMeshJson {
  seed: number[];
  n_rings: number;
  ring_samples: number;
  vertices: number[];
  normals: number[];
  uvs: number[];
  colors: number[];
  indices: number[];
  magnitude: number[];
  symmetry: number[];
}

export interface MeshDocumentJson {
  version: number;
  meta: {
    method: string;
    tau: number;
    m: number;
    radius_convention: string;
    include_mean: boolean;
    end_cap: boolean;
    colormap: {
      palette: number[][];
      suppress_color: number[];
      magnitude_percentile: number;
      magnitude_ceiling: number;
    };
    rng_seeds: number[];
    frame: string;
    generated_at: string | null;
  };
  meshes: TubeMeshJson[];
}

export interface ModelDescriptor {
  name: string;
  kind: string;
  file: string;
}

export interface ServerError {
  error: string;
  detail?: string;
}

export interface ValidationIssue {
  field: string;
  message: string;
}
