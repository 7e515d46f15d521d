#include <stdio.h>
#include <string.h>
#include "groundkit.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "failed: %s (line %d)\n", #cond, __LINE__); return 1; } } while (0)

int main(void) {
    GkPoint c;
    CHECK(gk_cell_center(8, 8, 800, 600, 1, &c) == GK_STATUS_OK);
    CHECK(c.x == 50.0 && c.y == 37.5);

    GkExtremities ids;
    CHECK(gk_parse_grid_ids("leftmost: 10, topmost: 2, rightmost: 12, bottommost: 26", 64, &ids) == GK_STATUS_OK);
    CHECK(ids.leftmost == 10 && ids.bottommost == 26);

    GkPoint p;
    CHECK(gk_parse_point("I cannot help", 800, 600, &p) == GK_STATUS_PARSE);
    CHECK(gk_last_error_message() != NULL);

    unsigned char px[4 * 4 * 3];
    memset(px, 255, sizeof px);
    GkImage *img = NULL;
    CHECK(gk_image_from_rgb(4, 4, px, sizeof px, &img) == GK_STATUS_OK);
    CHECK(gk_image_width(img) == 4);
    gk_image_free(img);
    printf("ok %s\n", gk_version());
    return 0;
}
