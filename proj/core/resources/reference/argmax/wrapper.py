def wrapper(input, dim=None, keepdim=False):
    if dim is None:
        rows = input.contiguous().view(1, -1)
        out_shape = [1 for _ in input.shape] if keepdim else []
    else:
        dim = dim % max(input.dim(), 1)
        moved = input.movedim(dim, -1).contiguous()
        rows = moved.view(-1, moved.shape[-1])
        if keepdim:
            out_shape = [1 if i == dim else s for i, s in enumerate(input.shape)]
        else:
            out_shape = [s for i, s in enumerate(input.shape) if i != dim]
    n_rows, n_cols = rows.shape
    output = torch.empty((n_rows,), dtype=torch.int64, device=input.device)
    BLOCK_SIZE = min(triton.next_power_of_2(max(n_cols, 1)), 1024)
    kernel[(n_rows,)](rows, output, n_cols, BLOCK_SIZE=BLOCK_SIZE)
    return output.view(out_shape)
